"""
Dataset — Обучающие пары для схем предобучения и словарь аугментаций.

Схема 1: сеть предсказывает артефакт r = x − x̃ (для X0 — точный ноль).
Схема 2: сеть предсказывает чистую глубину (для X0 — тождество).

Подмножества X0/X1 не пересекаются: доля split_fraction патчей получает
приближение x̃ = F⁺(F(x)) (или билинейное), остальные идут как есть.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ConfigError, MissingArtifactError
from core.sampling import DepthImage, SamplerSpec
from scenes.generator import extract_patches
from storage.raw_tensor import read_tensor_file, write_tensor_file

logger = logging.getLogger("nett.dataset")

MANIFEST_NAME = "manifest.txt"


class Subset(str, Enum):
    X0 = "X0"
    X1 = "X1"


class NoiseSpec(BaseModel):
    """Гауссов шум входа; sigma — стандартное отклонение."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["gaussian"] = "gaussian"
    sigma: float = Field(0.0, ge=0.0)
    schedule: Literal["none", "geometric"] = "none"
    ratio: float = Field(1.0, gt=0.0, le=1.0)
    period: int = Field(10, ge=1)          # эпох на один шаг расписания
    target_rule: Literal["none", "input_derived"] = "none"

    def effective_sigma(self, epoch: int) -> float:
        if self.schedule == "geometric":
            return self.sigma * self.ratio ** (epoch // self.period)
        return self.sigma


@dataclass
class SampleRecord:
    """Одна обучающая пара."""
    input: DepthImage
    target: DepthImage
    subset: Subset
    scheme: int
    augmentation: str = "none"
    scene: int = -1
    patch: int = -1
    ground_truth: DepthImage | None = None
    approximation: DepthImage | None = None

    @property
    def tags(self) -> str:
        return f"scene={self.scene};patch={self.patch};aug={self.augmentation}"

    def gt(self) -> DepthImage:
        if self.ground_truth is not None:
            return self.ground_truth
        return self.target if self.scheme == 2 else self.input + self.target

    def replace(self, **changes) -> SampleRecord:
        return dataclasses.replace(self, **changes)


@dataclass
class RawPatch:
    """Патч до назначения целей: (x, x̃, подмножество)."""
    ground_truth: DepthImage
    approximation: DepthImage
    subset: Subset
    scene: int
    patch: int


def make_scheme_targets(raw: list[RawPatch], scheme: int) -> list[SampleRecord]:
    """Назначить (вход, цель) по схеме предобучения."""
    if scheme not in (1, 2):
        raise ValueError(f"scheme must be 1 or 2, got {scheme}")
    records = []
    for p in raw:
        gt, approx = p.ground_truth, p.approximation
        if p.subset is Subset.X1:
            inp = approx.copy()
            target = gt - approx if scheme == 1 else gt.copy()
        else:
            inp = gt.copy()
            target = np.zeros_like(gt) if scheme == 1 else gt.copy()
        records.append(SampleRecord(
            input=inp, target=target, subset=p.subset, scheme=scheme,
            scene=p.scene, patch=p.patch, ground_truth=gt, approximation=approx,
        ))
    return records


def noise_sigma_from_gap(gt: DepthImage, approx: DepthImage, rule: str = "root") -> float:
    """σ для пар «GT + шум»: корень из MSE(gt, x̃) (root) или сам MSE (mse)."""
    mse = float(np.mean((gt - approx) ** 2))
    return mse if rule == "mse" else float(np.sqrt(mse))


def build_dataset(
    scenes: list[DepthImage],
    scheme: int,
    sampler: SamplerSpec,
    patch: int,
    stride: int,
    split_fraction: float = 0.5,
    seed: int = 0,
    gt_noise_pairs: bool = False,
    gt_noise_rule: Literal["root", "mse"] = "root",
    max_patches: int | None = None,
    scene_offset: int = 0,
) -> list[SampleRecord]:
    """Нарезать сцены, разделить на X0/X1 и построить пары по схеме."""
    if patch % sampler.factor:
        raise ConfigError(f"patch {patch} is not divisible by factor {sampler.factor}")
    if gt_noise_pairs and scheme != 2:
        # цель схемы 1 на X0 обязана быть нулём
        raise ConfigError("gt_noise_pairs is defined for Scheme 2 only")
    gts: list[DepthImage] = []
    origin: list[tuple[int, int]] = []
    for si, scene in enumerate(scenes):
        for pi, p in enumerate(extract_patches(scene, patch, stride)):
            gts.append(p)
            origin.append((scene_offset + si, pi))
    if max_patches is not None:
        gts, origin = gts[:max_patches], origin[:max_patches]
    n = len(gts)

    order = np.random.default_rng(seed).permutation(n)
    in_x1 = np.zeros(n, dtype=bool)
    in_x1[order[:int(round(n * split_fraction))]] = True

    batch = np.stack(gts) if gts else np.zeros((0, patch, patch))
    approx = sampler.approximate(sampler.forward(batch))
    raw = [
        RawPatch(gts[i], approx[i], Subset.X1 if in_x1[i] else Subset.X0, *origin[i])
        for i in range(n)
    ]
    records = make_scheme_targets(raw, scheme)

    if gt_noise_pairs:
        rng = np.random.default_rng([seed, 1])
        for p in raw:
            if p.subset is not Subset.X0:
                continue
            sigma = noise_sigma_from_gap(p.ground_truth, p.approximation, gt_noise_rule)
            noisy = p.ground_truth + rng.normal(0.0, sigma, size=p.ground_truth.shape)
            target = p.ground_truth.copy()
            records.append(SampleRecord(
                input=noisy, target=target, subset=Subset.X0, scheme=scheme,
                augmentation="gt-noise", scene=p.scene, patch=p.patch,
                ground_truth=p.ground_truth, approximation=p.approximation,
            ))

    n_x1 = int(in_x1.sum())
    logger.info(f"📦 Датасет: {len(records)} записей (X0={n - n_x1}, X1={n_x1}, схема {scheme})")
    return records


# ============================================================
# Аугментации
# ============================================================

def augment(record: SampleRecord, noise: NoiseSpec, epoch: int, rng: np.random.Generator) -> SampleRecord:
    """Гауссов шум во входе (и σ/10 в цели при target_rule=input_derived)."""
    sigma = noise.effective_sigma(epoch)
    if sigma == 0.0:
        return record
    noisy = record.input + rng.normal(0.0, sigma, size=record.input.shape)
    if record.scheme == 1:
        # шум входит в артефакт, который предсказывает сеть
        target = record.gt() - noisy
    else:
        target = record.target
    if noise.target_rule == "input_derived":
        target = target + rng.normal(0.0, sigma / 10.0, size=target.shape)
    return record.replace(input=noisy, target=target, augmentation=f"{record.augmentation}+noise")


def interpolation_augment(record: SampleRecord, lam: float) -> SampleRecord:
    """Вход ← λ·x + (1−λ)·x̃ для записей схемы 2 из X1."""
    if record.scheme != 2 or record.subset is not Subset.X1:
        raise ValueError(f"interpolation_augment needs a Scheme-2 X1 record, got scheme {record.scheme} {record.subset.value}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    approx = record.approximation if record.approximation is not None else record.input
    mixed = lam * record.target + (1.0 - lam) * approx
    return record.replace(input=mixed, augmentation="interpolation")


def rotate90_augment(record: SampleRecord, k: int) -> SampleRecord:
    """Поворот всех изображений записи на k·90°."""
    if k % 4 == 0:
        return record
    rot = lambda a: None if a is None else np.rot90(a, k, axes=(-2, -1)).copy()  # noqa: E731
    return record.replace(
        input=rot(record.input), target=rot(record.target),
        ground_truth=rot(record.ground_truth), approximation=rot(record.approximation),
        augmentation=f"{record.augmentation}+rot{k % 4}",
    )


# ============================================================
# Экспорт / импорт
# ============================================================

def export_dataset(records: list[SampleRecord], directory: str | Path) -> Path:
    """Каталог тензорных файлов + manifest.txt (по строке на запись)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, rec in enumerate(records):
        inp, tgt = f"{i:06d}_input.tensor", f"{i:06d}_target.tensor"
        write_tensor_file(directory / inp, "input", rec.input)
        write_tensor_file(directory / tgt, "target", rec.target)
        lines.append(f"{inp} {tgt} {rec.subset.value} {rec.scheme} {rec.tags}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _parse_tags(tags: str) -> dict[str, str]:
    return dict(part.split("=", 1) for part in tags.split(";") if "=" in part)


def import_dataset(directory: str | Path) -> list[SampleRecord]:
    """Прочитать датасет; x и x̃ восстанавливаются из пар (вход, цель)."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.exists():
        raise MissingArtifactError(f"dataset manifest not found: {manifest}")
    records = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        inp_path, tgt_path, subset, scheme, tags = line.split(" ", 4)
        _, inp = read_tensor_file(directory / inp_path)
        _, tgt = read_tensor_file(directory / tgt_path)
        meta = _parse_tags(tags)
        scheme_i = int(scheme)
        sub = Subset(subset)
        gt = tgt.copy() if scheme_i == 2 else inp + tgt
        records.append(SampleRecord(
            input=inp, target=tgt, subset=sub, scheme=scheme_i,
            augmentation=meta.get("aug", "none"),
            scene=int(meta.get("scene", -1)), patch=int(meta.get("patch", -1)),
            ground_truth=gt,
            approximation=inp.copy() if sub is Subset.X1 else None,
        ))
    return records
