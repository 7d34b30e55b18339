"""
Scene Generator — Синтетические сцены глубины: кубы, сферы, плоскости.

Ортографическая камера смотрит вдоль +z; глубина пикселя — минимум по
всем примитивам и фоновой плоскости (z-буфер). Координаты u, v и глубина
измеряются в одних нормированных единицах [0, 1], поэтому у сферы радиуса r
глубина внутри силуэта равна z_c − √(r² − ρ²).

Режим complex добавляет тонкие бруски (мелкие структуры) — настольный
аналог геометрически сложных сцен.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.errors import ShapeError
from core.sampling import DepthImage
from core.settings import worker_count
from core.tensor import Array

logger = logging.getLogger("nett.scenegen")

Range = tuple[float, float]
CountRange = tuple[int, int]


class SceneSpec(BaseModel):
    """Параметры генератора сцен."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    height: int = Field(64, ge=4)
    width: int = Field(64, ge=4)
    complexity: Literal["simple", "complex"] = "simple"
    cubes: CountRange = (1, 3)
    spheres: CountRange = (1, 3)
    planes: CountRange = (0, 2)
    thin_bars: CountRange = (2, 4)       # только для complexity=complex
    size_range: Range = (0.08, 0.22)     # полуребро куба / радиус сферы
    depth_range: Range = (0.3, 0.7)      # глубина центров
    background_depth: float = Field(0.9, ge=0.0, le=1.0)
    background_tilt: float = Field(0.05, ge=0.0)

    @field_validator("cubes", "spheres", "planes", "thin_bars")
    @classmethod
    def _counts(cls, v: CountRange) -> CountRange:
        lo, hi = v
        if lo < 0 or hi < lo:
            raise ValueError(f"count range must satisfy 0 <= lo <= hi, got {v}")
        return v

    @field_validator("size_range", "depth_range")
    @classmethod
    def _ranges(cls, v: Range) -> Range:
        lo, hi = v
        if hi < lo or lo < 0:
            raise ValueError(f"range must satisfy 0 <= lo <= hi, got {v}")
        return v


# ============================================================
# Примитивы
# ============================================================

@dataclass
class Sphere:
    cu: float
    cv: float
    cz: float
    radius: float

    def depth(self, u: Array, v: Array) -> Array:
        rho2 = (u - self.cu) ** 2 + (v - self.cv) ** 2
        inside = rho2 < self.radius ** 2
        z = np.full(u.shape, np.inf)
        z[inside] = self.cz - np.sqrt(self.radius ** 2 - rho2[inside])
        return z


@dataclass
class Box:
    """Ориентированный параллелепипед (куб или тонкий брусок)."""
    center: Array       # (3,)
    rotation: Array     # (3, 3), столбцы: оси бокса
    half: Array         # (3,)

    def depth(self, u: Array, v: Array) -> Array:
        o = np.stack([u - self.center[0], v - self.center[1], -np.full(u.shape, self.center[2])], axis=-1)
        local_o = o @ self.rotation
        local_d = self.rotation[2, :]
        t_near = np.full(u.shape, -np.inf)
        t_far = np.full(u.shape, np.inf)
        hit = np.ones(u.shape, dtype=bool)
        for k in range(3):
            ok, dk, hk = local_o[..., k], local_d[k], self.half[k]
            if abs(dk) < 1e-12:
                hit &= np.abs(ok) <= hk
                continue
            t1 = (-hk - ok) / dk
            t2 = (hk - ok) / dk
            t_near = np.maximum(t_near, np.minimum(t1, t2))
            t_far = np.minimum(t_far, np.maximum(t1, t2))
        hit &= (t_near <= t_far) & (t_far > 0)
        return np.where(hit, np.maximum(t_near, 0.0), np.inf)


@dataclass
class Quad:
    """Прямоугольный кусок плоскости."""
    center: Array
    rotation: Array     # столбцы 0, 1: оси в плоскости; 2: нормаль
    half: Array         # (2,)

    def depth(self, u: Array, v: Array) -> Array:
        n = self.rotation[:, 2]
        if abs(n[2]) < 0.2:
            return np.full(u.shape, np.inf)
        t = (n[0] * (self.center[0] - u) + n[1] * (self.center[1] - v) + n[2] * self.center[2]) / n[2]
        rel = np.stack([u - self.center[0], v - self.center[1], t - self.center[2]], axis=-1)
        a = rel @ self.rotation[:, 0]
        b = rel @ self.rotation[:, 1]
        hit = (np.abs(a) <= self.half[0]) & (np.abs(b) <= self.half[1]) & (t > 0)
        return np.where(hit, t, np.inf)


Primitive = Sphere | Box | Quad


def _random_rotation(rng: np.random.Generator, max_tilt: float | None = None) -> Array:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    if max_tilt is not None and abs(rot[2, 2]) < np.cos(max_tilt):
        # нормаль слишком наклонена, берём плоскость с ограниченным наклоном
        ax, ay = rng.uniform(-max_tilt, max_tilt, size=2) / np.sqrt(2.0)
        cx, sx, cy, sy = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay)
        rot = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]]) @ np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return rot


def sample_primitives(spec: SceneSpec, rng: np.random.Generator) -> list[Primitive]:
    """Случайный набор примитивов по спецификации (порядок выборок фиксирован)."""
    prims: list[Primitive] = []
    lo_d, hi_d = spec.depth_range
    lo_s, hi_s = spec.size_range

    for _ in range(rng.integers(spec.cubes[0], spec.cubes[1] + 1)):
        s = rng.uniform(lo_s, hi_s)
        cu, cv = rng.uniform(0.0, 1.0, size=2)
        cz = max(rng.uniform(lo_d, hi_d), np.sqrt(3.0) * s + 0.02)
        prims.append(Box(np.array([cu, cv, cz]), _random_rotation(rng), np.full(3, s)))

    for _ in range(rng.integers(spec.spheres[0], spec.spheres[1] + 1)):
        r = rng.uniform(lo_s, hi_s)
        cu, cv = rng.uniform(0.0, 1.0, size=2)
        cz = max(rng.uniform(lo_d, hi_d), r + 0.02)
        prims.append(Sphere(cu, cv, cz, r))

    for _ in range(rng.integers(spec.planes[0], spec.planes[1] + 1)):
        half = rng.uniform(lo_s, 2.0 * hi_s, size=2)
        cu, cv = rng.uniform(0.0, 1.0, size=2)
        rot = _random_rotation(rng, max_tilt=np.pi / 3)
        cz = max(rng.uniform(lo_d, hi_d), 1.8 * float(np.max(half)) + 0.02)
        prims.append(Quad(np.array([cu, cv, cz]), rot, half))

    if spec.complexity == "complex":
        for _ in range(rng.integers(spec.thin_bars[0], spec.thin_bars[1] + 1)):
            length = rng.uniform(2.0 * lo_s, 2.0 * hi_s)
            thick = rng.uniform(0.008, 0.02)
            cu, cv = rng.uniform(0.0, 1.0, size=2)
            cz = max(rng.uniform(lo_d, hi_d), length + 0.02)
            prims.append(Box(np.array([cu, cv, cz]), _random_rotation(rng), np.array([length, thick, thick])))
    return prims


def render_primitives(height: int, width: int, background: Array, primitives: list[Primitive]) -> DepthImage:
    """Z-буфер: минимум глубины по примитивам и фону, обрезка в [0, 1]."""
    v, u = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    depth = np.array(background, dtype=np.float64, copy=True)
    for prim in primitives:
        depth = np.minimum(depth, prim.depth(u, v))
    return np.clip(depth, 0.0, 1.0)


def generate_scene(spec: SceneSpec) -> DepthImage:
    """Детерминированная по seed карта глубины H×W в [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    tu, tv = rng.uniform(-spec.background_tilt, spec.background_tilt, size=2)
    v, u = np.meshgrid((np.arange(spec.height) + 0.5) / spec.height,
                       (np.arange(spec.width) + 0.5) / spec.width, indexing="ij")
    background = spec.background_depth + tu * (u - 0.5) + tv * (v - 0.5)
    prims = sample_primitives(spec, rng)
    return render_primitives(spec.height, spec.width, background, prims)


def scene_seeds(master_seed: int | Sequence[int], count: int) -> list[int]:
    """Независимые seed'ы сцен из мастер-seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def generate_scenes(
    spec: SceneSpec, count: int, master_seed: int | Sequence[int], workers: int | None = None,
) -> list[DepthImage]:
    """Сцены параллельно по seed; порядок результата не зависит от числа воркеров."""
    specs = [spec.model_copy(update={"seed": s}) for s in scene_seeds(master_seed, count)]
    workers = workers or worker_count()
    if workers == 1 or count < 2:
        scenes = [generate_scene(s) for s in specs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scenes = list(pool.map(generate_scene, specs))
    logger.info(f"🧱 Сгенерировано сцен: {count} ({spec.complexity}, {spec.height}x{spec.width})")
    return scenes


def extract_patches(image: DepthImage, patch: int, stride: int) -> list[DepthImage]:
    """Построчная нарезка на патчи patch×patch с шагом stride."""
    h, w = image.shape[-2:]
    if patch > h or patch > w:
        raise ShapeError(f"extract_patches: patch {patch} exceeds image {h}x{w}")
    if stride < 1:
        raise ShapeError(f"extract_patches: stride must be >= 1, got {stride}")
    return [
        image[..., i:i + patch, j:j + patch].copy()
        for i in range(0, h - patch + 1, stride)
        for j in range(0, w - patch + 1, stride)
    ]


def assemble_patches(patches: list[DepthImage], height: int, width: int) -> DepthImage:
    """Обратная сборка непересекающихся патчей (stride == patch)."""
    patch = patches[0].shape[-1]
    out = np.zeros((height, width))
    k = 0
    for i in range(0, height - patch + 1, patch):
        for j in range(0, width - patch + 1, patch):
            out[i:i + patch, j:j + patch] = patches[k]
            k += 1
    return out
