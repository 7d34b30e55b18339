"""
Optim — Adam с коррекцией смещения моментов.

Обновление выполняется на месте и детерминировано.
"""

from __future__ import annotations

from collections.abc import Mapping, MutableMapping
from dataclasses import dataclass, field

import numpy as np

from core.tensor import Array


@dataclass
class AdamState:
    """Буферы первого и второго моментов по имени параметра."""
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Array]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_update(
    weights: MutableMapping[str, Array],
    grads: Mapping[str, Array],
    state: AdamState,
    step_count: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> MutableMapping[str, Array]:
    """Один шаг Adam для всех параметров, у которых есть градиент."""
    if step_count < 1:
        raise ValueError(f"adam_update: step_count must be >= 1, got {step_count}")
    bias1 = 1.0 - beta1 ** step_count
    bias2 = 1.0 - beta2 ** step_count
    for name, w in weights.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    state.step = step_count
    return weights
