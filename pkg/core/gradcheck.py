"""
Gradcheck — Оракул центральных разностей для проверки обратного прохода.

Перемещения, которые пересекают излом (смена знака leaky ReLU или смена
argmax в max-pool между x+ε и x−ε), помечаются недействительными и не
участвуют в сравнении.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable

import numpy as np

from core.tensor import Array, Tape, Tensor

ScalarFn = Callable[[Tensor], Tensor]


def _evaluate(fn: ScalarFn, x: Array) -> tuple[float, bytes]:
    with Tape() as tape:
        out = fn(Tensor(x, requires_grad=True))
    return out.item(), tape.kink_signature()


def analytic_gradient(fn: ScalarFn, x: Array) -> Array:
    """Градиент fn в точке x обратным проходом."""
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        out = fn(t)
    tape.backward(out)
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def numerical_gradient(
    fn: ScalarFn,
    x: Array,
    eps: float = 1e-5,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> tuple[Array, np.ndarray]:
    """Центральные разности; возвращает (градиент, маска годных координат)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    coords = list(indices) if indices is not None else list(np.ndindex(x.shape))
    valid = np.zeros(x.shape, dtype=bool)
    for idx in coords:
        orig = x[idx]
        x[idx] = orig + eps
        f_plus, sig_plus = _evaluate(fn, x)
        x[idx] = orig - eps
        f_minus, sig_minus = _evaluate(fn, x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
        valid[idx] = sig_plus == sig_minus
    return grad, valid


def relative_error(analytic: Array, numeric: Array, mask: np.ndarray | None = None) -> float:
    """max|a − n| / max(max|a|, max|n|) по годным координатам."""
    if mask is not None:
        analytic, numeric = analytic[mask], numeric[mask]
    if analytic.size == 0:
        return 0.0
    denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / denom)


def check_gradient(
    fn: ScalarFn,
    x: Array,
    eps: float = 1e-5,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> float:
    """Относительная ошибка аналитического градиента против центральных разностей."""
    coords = list(indices) if indices is not None else None
    analytic = analytic_gradient(fn, x)
    numeric, valid = numerical_gradient(fn, x, eps=eps, indices=coords)
    return relative_error(analytic, numeric, valid)
