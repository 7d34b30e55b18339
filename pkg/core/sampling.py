"""
Sampling — Оператор понижения разрешения F, его псевдообратный F⁺,
сопряжённый Fᵀ и билинейное повышение разрешения.

Изображение глубины — массив (..., H, W) float64; все операторы действуют
на две последние оси, так что батчи (N, 1, H, W) обрабатываются без циклов.

Константы оператора: ‖F x‖₂ ≤ ‖x‖₂ / factor, L = ‖FᵀF‖ = 1 / factor².
"""

from __future__ import annotations

from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ShapeError
from core.tensor import Array

DepthImage = Array


class UpsampleKind(str, Enum):
    PSEUDO_INVERSE = "pseudo_inverse"
    BILINEAR = "bilinear"


class SamplerSpec(BaseModel):
    """Параметры пары понижение/повышение разрешения."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    factor: int = Field(4, ge=2)
    downsample: Literal["box"] = "box"
    upsample: UpsampleKind = UpsampleKind.PSEUDO_INVERSE

    def forward(self, x: DepthImage) -> DepthImage:
        return box_downsample(x, self.factor)

    def approximate(self, y: DepthImage) -> DepthImage:
        """Приближение высокого разрешения по наблюдению y."""
        return upsample(y, self.factor, self.upsample)


def as_depth_image(x: object) -> DepthImage:
    """Привести к float64 и проверить конечность значений."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"depth image must have at least 2 dims, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("depth image contains non-finite values")
    return arr


def box_downsample(x: DepthImage, factor: int) -> DepthImage:
    """Среднее по блокам factor×factor."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"box_downsample: image {h}x{w} is not divisible by factor {factor} "
                         f"(height {h}, width {w})")
    lead = x.shape[:-2]
    blocks = x.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1))


def pseudo_inverse_upsample(y: DepthImage, factor: int) -> DepthImage:
    """Повтор каждого пикселя блоком factor×factor; F(F⁺(y)) = y."""
    y = np.asarray(y, dtype=np.float64)
    return np.repeat(np.repeat(y, factor, axis=-2), factor, axis=-1)


def adjoint_upsample(r: DepthImage, factor: int) -> DepthImage:
    """Fᵀ: повтор с весом 1/factor²; ⟨F x, y⟩ = ⟨x, Fᵀ y⟩."""
    return pseudo_inverse_upsample(r, factor) / float(factor * factor)


def _interp_matrix(n: int, factor: int) -> Array:
    # центры пикселей в половинках (align_corners=False), на краях повтор
    dst = np.arange(n * factor)
    src = np.clip((dst + 0.5) / factor - 0.5, 0.0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    t = src - i0
    m = np.zeros((n * factor, n))
    np.add.at(m, (dst, i0), 1.0 - t)
    np.add.at(m, (dst, i1), t)
    return m


def bilinear_upsample(y: DepthImage, factor: int) -> DepthImage:
    """Билинейная интерполяция с центрами пикселей в половинках."""
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape[-2:]
    return _interp_matrix(h, factor) @ y @ _interp_matrix(w, factor).T


def upsample(y: DepthImage, factor: int, kind: UpsampleKind | str) -> DepthImage:
    kind = UpsampleKind(kind)
    if kind is UpsampleKind.BILINEAR:
        return bilinear_upsample(y, factor)
    return pseudo_inverse_upsample(y, factor)
