"""
Metrics — RMSE_d, рендер по нормалям и RMSE_v.

Рендер: n = normalize(−∂z/∂u, −∂z/∂v, 1), центральные разности с повтором
краёв, яркость = max(0, n·l). При свете (0, 0, 1) яркость равна 1/√(1+‖∇z‖²).
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.errors import ShapeError
from core.sampling import DepthImage
from core.tensor import Array


class RenderSpec(BaseModel):
    """Параметры ламбертова рендера с источником «в лоб»."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    light: tuple[float, float, float] = (0.0, 0.0, 1.0)
    aspect: float = Field(1.0, gt=0.0)    # единиц глубины на пиксель
    boundary: str = "replicate"

    @field_validator("light")
    @classmethod
    def _normalize(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ValueError("light direction must be non-zero")
        return tuple(float(c) / norm for c in v)

    @field_validator("boundary")
    @classmethod
    def _boundary(cls, v: str) -> str:
        if v != "replicate":
            raise ValueError(f"only 'replicate' boundary is supported, got {v!r}")
        return v


def _same_shape(x: Array, gt: Array, op: str) -> None:
    if x.shape != gt.shape:
        raise ShapeError(f"{op}: shapes {x.shape} and {gt.shape} differ")


def rmse_d(x: DepthImage, gt: DepthImage) -> float:
    x, gt = np.asarray(x, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _same_shape(x, gt, "rmse_d")
    return float(np.sqrt(np.mean((x - gt) ** 2)))


def render(x: DepthImage, spec: RenderSpec | None = None) -> Array:
    """Полутоновой рендер карты глубины в [0, 1]."""
    spec = spec or RenderSpec()
    z = np.asarray(x, dtype=np.float64)
    if z.shape[-2] < 2 or z.shape[-1] < 2:
        raise ShapeError(f"render: image {z.shape} is smaller than 2x2")
    pad = [(0, 0)] * (z.ndim - 2) + [(1, 1), (1, 1)]
    zp = np.pad(z, pad, mode="edge")
    gu = (zp[..., 1:-1, 2:] - zp[..., 1:-1, :-2]) / (2.0 * spec.aspect)
    gv = (zp[..., 2:, 1:-1] - zp[..., :-2, 1:-1]) / (2.0 * spec.aspect)
    norm = np.sqrt(gu * gu + gv * gv + 1.0)
    lx, ly, lz = spec.light
    intensity = (-gu * lx - gv * ly + lz) / norm
    return np.clip(intensity, 0.0, 1.0)


def rmse_v(x: DepthImage, gt: DepthImage, spec: RenderSpec | None = None) -> float:
    x, gt = np.asarray(x, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _same_shape(x, gt, "rmse_v")
    return rmse_d(render(x, spec), render(gt, spec))
