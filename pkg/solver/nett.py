"""
NETT — Вариационная оптимизация ½‖F(x) − y‖² + α·R(x) → min.

Инкрементальный градиентный спуск, шаг из двух частей:
    x_a = x − s·Fᵀ(F(x) − y)                (данные)
    x'  = x_a − s·α·∇R(x_a)                 (регуляризатор)

Регуляризатор R(x) = ψ(Φ(x)) — см. RegularizerKind; ∇R считается обратным
проходом через сеть по входу при замороженных весах. Итерации не обрезаются
в [0, 1].
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ConfigError, DivergenceError, ShapeError
from core.sampling import DepthImage, SamplerSpec, UpsampleKind, adjoint_upsample, box_downsample, upsample
from core.tensor import Array, Tape, Tensor, add, sub, sum_squares
from network.regnet import WeightStore, forward, predict
from validation.metrics import RenderSpec, rmse_d, rmse_v

logger = logging.getLogger("nett.solver")


class RegularizerKind(str, Enum):
    SCHEME1_NORM = "scheme1_norm"           # ‖Φ(x)‖²
    SCHEME2_RESIDUAL = "scheme2_residual"   # ‖Φ(x) − x‖²
    COERCIVE_SKIP = "coercive_skip"         # ‖Φ(x) − x‖² + ‖x‖²

    @classmethod
    def parse(cls, value: str) -> RegularizerKind:
        try:
            return cls(value.strip().lower())
        except ValueError:
            known = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown regularizer kind {value!r}; expected one of: {known}", code="regularizer")

    @classmethod
    def for_scheme(cls, scheme: int, scheme2_kind: RegularizerKind | None = None) -> RegularizerKind:
        """Регуляризатор, согласованный со схемой предобучения."""
        if scheme == 1:
            return cls.SCHEME1_NORM
        return cls(scheme2_kind or cls.SCHEME2_RESIDUAL)


class NettConfig(BaseModel):
    """Гиперпараметры оптимизации."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    s: float = Field(1.0, gt=0.0)
    alpha: float = Field(0.01, ge=0.0)
    iterations: int = Field(30, ge=0)
    regularizer: RegularizerKind = RegularizerKind.SCHEME2_RESIDUAL
    init: UpsampleKind = UpsampleKind.PSEUDO_INVERSE
    record_every: int = Field(1, ge=1)
    divergence_factor: float = Field(1e6, gt=1.0)


# ============================================================
# Трасса метрик
# ============================================================

TRACE_COLUMNS = ("iter", "data_term", "reg_term", "functional", "rmse_d", "rmse_v")


@dataclass
class TraceRow:
    iteration: int
    data_term: float
    reg_term: float
    functional: float
    rmse_d: float | None = None
    rmse_v: float | None = None


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.12g}"


@dataclass
class MetricTrace:
    """Записи по итерациям; номера строго возрастают, значения конечны."""
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError(f"trace iteration {row.iteration} does not follow {self.rows[-1].iteration}")
        values = [row.data_term, row.reg_term, row.functional, row.rmse_d, row.rmse_v]
        if not all(np.isfinite(v) for v in values if v is not None):
            raise DivergenceError(f"non-finite metrics at iteration {row.iteration}", trace=self)
        self.rows.append(row)

    def column(self, name: str) -> Array:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([r.iteration, _fmt(r.data_term), _fmt(r.reg_term), _fmt(r.functional),
                            _fmt(r.rmse_d), _fmt(r.rmse_v)])
        return path


# ============================================================
# Регуляризатор
# ============================================================

def _as_batch(x: DepthImage) -> tuple[Array, tuple[int, ...]]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None], x.shape
    if x.ndim == 3:
        return x[:, None], x.shape
    raise ShapeError(f"regularizer: expected (H, W) or (N, H, W) depth, got {x.shape}")


def _regularizer_graph(kind: RegularizerKind, weights: WeightStore, xt: Tensor) -> Tensor:
    phi = forward(weights, xt)
    if kind is RegularizerKind.SCHEME1_NORM:
        return sum_squares(phi)
    residual = sum_squares(sub(phi, xt))
    if kind is RegularizerKind.COERCIVE_SKIP:
        return add(residual, sum_squares(xt))
    return residual


def regularizer_value(kind: RegularizerKind, weights: WeightStore, x: DepthImage) -> float:
    batch, _ = _as_batch(x)
    return _regularizer_graph(RegularizerKind(kind), weights, Tensor(batch)).item()


def regularizer_value_and_grad(kind: RegularizerKind, weights: WeightStore, x: DepthImage) -> tuple[float, DepthImage]:
    """R(x) и ∇R(x) по входу. Для батча (N, H, W) значение — сумма по образцам."""
    batch, shape = _as_batch(x)
    xt = Tensor(batch, requires_grad=True)
    with Tape() as tape:
        value = _regularizer_graph(RegularizerKind(kind), weights, xt)
    tape.backward(value)
    grad = xt.grad if xt.grad is not None else np.zeros_like(batch)
    return value.item(), grad.reshape(shape)


# ============================================================
# Оптимизация
# ============================================================

def data_term(x: DepthImage, y: DepthImage, factor: int) -> float:
    return 0.5 * float(np.sum((box_downsample(x, factor) - y) ** 2))


def nett_step(
    x: DepthImage,
    y: DepthImage,
    weights: WeightStore,
    cfg: NettConfig,
    sampler: SamplerSpec | None = None,
) -> DepthImage:
    """Один шаг: сначала данные, затем регуляризатор."""
    sampler = sampler or SamplerSpec()
    fx = box_downsample(x, sampler.factor)
    if fx.shape != np.shape(y):
        raise ShapeError(f"nett_step: F(x) has shape {fx.shape}, y has shape {np.shape(y)}")
    x_a = x - cfg.s * adjoint_upsample(fx - y, sampler.factor)
    if not np.all(np.isfinite(x_a)):
        raise DivergenceError("nett_step: non-finite iterate after data step")
    if cfg.alpha == 0.0:
        return x_a
    _, grad = regularizer_value_and_grad(cfg.regularizer, weights, x_a)
    x_next = x_a - cfg.s * cfg.alpha * grad
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError("nett_step: non-finite iterate after regularizer step")
    return x_next


def _trace_row(
    k: int, x: DepthImage, y: DepthImage, weights: WeightStore, cfg: NettConfig,
    sampler: SamplerSpec, gt: DepthImage | None, render_spec: RenderSpec,
) -> TraceRow:
    d = data_term(x, y, sampler.factor)
    r = regularizer_value(cfg.regularizer, weights, x)
    row = TraceRow(iteration=k, data_term=d, reg_term=r, functional=d + cfg.alpha * r)
    if gt is not None:
        row.rmse_d = rmse_d(x, gt)
        row.rmse_v = rmse_v(x, gt, render_spec)
    return row


def nett_optimize(
    y: DepthImage,
    weights: WeightStore,
    cfg: NettConfig,
    gt: DepthImage | None = None,
    sampler: SamplerSpec | None = None,
    render_spec: RenderSpec | None = None,
) -> tuple[DepthImage, MetricTrace]:
    """Запуск из x₀ = upsample(y); возвращает последнюю итерацию и трассу."""
    sampler = sampler or SamplerSpec()
    render_spec = render_spec or RenderSpec()
    y = np.asarray(y, dtype=np.float64)
    x = upsample(y, sampler.factor, cfg.init)

    trace = MetricTrace()
    first = _trace_row(0, x, y, weights, cfg, sampler, gt, render_spec)
    trace.append(first)
    limit = cfg.divergence_factor * max(first.functional, 1e-12)

    for k in range(1, cfg.iterations + 1):
        try:
            x = nett_step(x, y, weights, cfg, sampler)
            if k % cfg.record_every == 0 or k == cfg.iterations:
                row = _trace_row(k, x, y, weights, cfg, sampler, gt, render_spec)
                trace.append(row)
                if row.functional > limit:
                    raise DivergenceError(f"functional {row.functional:.3g} exceeds {limit:.3g}")
        except DivergenceError as e:
            logger.error(f"💥 NETT разошёлся на итерации {k}: {e}")
            raise DivergenceError(f"diverged at iteration {k}: {e}", trace=trace) from e

    last = trace.rows[-1]
    logger.debug(f"NETT: {cfg.iterations} итераций, функционал {first.functional:.4g} → {last.functional:.4g}")
    return x, trace


# ============================================================
# Диагностика
# ============================================================

@dataclass
class ProbeRow:
    t: float
    value: float
    ratio: float            # R(t·x0) / t²
    lower_bound: float      # t²·‖x0‖²


@dataclass
class CoercivityProbe:
    kind: RegularizerKind
    rows: list[ProbeRow]

    @property
    def strictly_increasing(self) -> bool:
        values = [r.value for r in self.rows]
        return all(b > a for a, b in zip(values, values[1:]))

    @property
    def bound_holds(self) -> bool:
        return all(r.value >= r.lower_bound for r in self.rows)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t", "value", "ratio", "lower_bound"])
            for r in self.rows:
                w.writerow([_fmt(r.t), _fmt(r.value), _fmt(r.ratio), _fmt(r.lower_bound)])
        return path


def coercivity_probe(
    kind: RegularizerKind, weights: WeightStore, x0: DepthImage, scales: list[float],
) -> CoercivityProbe:
    """R вдоль луча t·x0."""
    if not scales or any(t <= 0 for t in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"coercivity_probe: scales must be positive and ascending, got {scales}")
    kind = RegularizerKind(kind)
    norm2 = float(np.sum(np.asarray(x0) ** 2))
    rows = []
    for t in scales:
        value = regularizer_value(kind, weights, t * np.asarray(x0))
        rows.append(ProbeRow(t=float(t), value=value, ratio=value / (t * t), lower_bound=t * t * norm2))
    return CoercivityProbe(kind, rows)


@dataclass
class TraceCorrelation:
    """Пирсон функционала с метриками; None — ряд постоянен (коэффициент не определён)."""
    functional_rmse_d: float | None
    functional_rmse_v: float | None

    @property
    def undefined(self) -> list[str]:
        return [name for name, v in (("rmse_d", self.functional_rmse_d), ("rmse_v", self.functional_rmse_v))
                if v is None]


def _pearson(a: Array, b: Array) -> float | None:
    if np.std(a) == 0.0 or np.std(b) == 0.0:
        return None
    return float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))


def correlate_trace(trace: MetricTrace) -> TraceCorrelation:
    rows = [r for r in trace.rows if r.rmse_d is not None and r.rmse_v is not None]
    if len(rows) < 3:
        raise ValueError(f"correlate_trace: need at least 3 rows with ground-truth metrics, got {len(rows)}")
    f = np.array([r.functional for r in rows])
    return TraceCorrelation(
        functional_rmse_d=_pearson(f, np.array([r.rmse_d for r in rows])),
        functional_rmse_v=_pearson(f, np.array([r.rmse_v for r in rows])),
    )


@dataclass
class AuditReport:
    """Проверка неравенства ‖Φ(x₁)−x₁‖² ≥ ‖Φ(x̃)−x̃‖² на выборке."""
    samples: int
    s_alpha: float
    fraction_holds: float           # ‖r₁‖² ≥ ‖r₀‖²
    fraction_bound_holds: float     # ‖r₁‖² ≥ ‖r₀‖² + ‖s·α·∇R‖²
    fraction_cross_nonneg: float    # ⟨r₀, s·α·∇R⟩ ≥ 0
    mean_cross_term: float          # среднее 2⟨r₀, s·α·∇R⟩

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "s_alpha": self.s_alpha,
            "fraction_holds": self.fraction_holds,
            "fraction_bound_holds": self.fraction_bound_holds,
            "fraction_cross_nonneg": self.fraction_cross_nonneg,
            "mean_cross_term": self.mean_cross_term,
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        d = self.to_dict()
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(list(d))
            w.writerow([v if isinstance(v, int) else _fmt(v) for v in d.values()])
        return path


def _audit_residual(kind: RegularizerKind, weights: WeightStore, x: Array) -> Array:
    # схема 1: сеть сама выдаёт остаток
    out = predict(weights, x)
    return out if kind is RegularizerKind.SCHEME1_NORM else out - x


def cross_term_audit(
    inputs: Array,
    weights: WeightStore,
    s_alpha: float = 0.001,
    kind: RegularizerKind = RegularizerKind.SCHEME2_RESIDUAL,
    chunk: int = 64,
) -> AuditReport:
    """Один шаг регуляризатора из каждого x̃ (N, H, W) и сравнение невязок."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or len(inputs) == 0:
        raise ShapeError(f"cross_term_audit: expected non-empty (N, H, W) inputs, got {inputs.shape}")
    holds, bound, cross = [], [], []
    for start in range(0, len(inputs), chunk):
        xt = inputs[start:start + chunk]
        _, grad = regularizer_value_and_grad(kind, weights, xt)
        step = s_alpha * grad
        x1 = xt - step
        r0 = _audit_residual(kind, weights, xt)
        r1 = _audit_residual(kind, weights, x1)
        n0 = np.sum(r0 ** 2, axis=(1, 2))
        n1 = np.sum(r1 ** 2, axis=(1, 2))
        c = np.sum(r0 * step, axis=(1, 2))
        holds.append(n1 >= n0)
        bound.append(n1 >= n0 + np.sum(step ** 2, axis=(1, 2)))
        cross.append(c)
    holds_a, bound_a, cross_a = np.concatenate(holds), np.concatenate(bound), np.concatenate(cross)
    report = AuditReport(
        samples=len(inputs),
        s_alpha=s_alpha,
        fraction_holds=float(holds_a.mean()),
        fraction_bound_holds=float(bound_a.mean()),
        fraction_cross_nonneg=float((cross_a >= 0).mean()),
        mean_cross_term=float(2.0 * cross_a.mean()),
    )
    logger.info(f"🔍 Аудит перекрёстного члена ({kind.value}): {report.fraction_holds:.1%} выборок "
                f"удовлетворяют неравенству ({report.samples} шт.)")
    return report


@dataclass
class GridPoint:
    s: float
    alpha: float
    rmse_d: float | None
    rmse_v: float | None
    status: str = "ok"


def grid_search(
    y: DepthImage,
    gt: DepthImage,
    weights: WeightStore,
    cfg: NettConfig,
    s_values: list[float],
    alpha_values: list[float],
    sampler: SamplerSpec | None = None,
    render_spec: RenderSpec | None = None,
) -> list[GridPoint]:
    """Финальные RMSE_d / RMSE_v по сетке (s, α); расходимость фиксируется в status."""
    points = []
    for s, alpha in product(s_values, alpha_values):
        point_cfg = cfg.model_copy(update={"s": s, "alpha": alpha})
        try:
            x, _ = nett_optimize(y, weights, point_cfg, None, sampler, render_spec)
        except DivergenceError as e:
            points.append(GridPoint(s, alpha, None, None, status=f"diverged: {e}"))
            continue
        points.append(GridPoint(s, alpha, rmse_d(x, gt), rmse_v(x, gt, render_spec)))
    return points
