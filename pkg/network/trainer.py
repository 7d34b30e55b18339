"""
Trainer — Предобучение Φ_V по схеме 1 или 2 (MSE + Adam).

Детерминизм: порядок перемешивания и все случайные аугментации эпохи e
берутся из генератора default_rng([seed, e]). Возвращаются веса с лучшей
валидационной ошибкой.

Аугментации (набор TrainConfig.augmentations):
    rotate90       — поворот каждого патча на k·90°
    interpolation  — +1 запись на X1: вход λ·x + (1−λ)·x̃, λ ~ U[0, 1]
    one_step       — +1 запись на X1: вход x̃ − s·α·∇R(x̃) (с эпохи 1, веса на начало эпохи)
    gt_noise_pairs — X0-записи «GT + шум» (добавляются при построении датасета)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from core.errors import ConfigError, DivergenceError, ShapeError
from core.optim import AdamState, adam_update
from core.resource_monitor import WallClock, take_snapshot
from core.tensor import Tape, Tensor, mse_loss
from network.regnet import NetworkSpec, WeightStore, build_network, forward, predict
from scenes.dataset import (
    NoiseSpec, SampleRecord, Subset, augment, interpolation_augment,
    make_scheme_targets, rotate90_augment,
)
from solver.nett import RegularizerKind, regularizer_value_and_grad

logger = logging.getLogger("nett.trainer")

Augmentation = Literal["rotate90", "interpolation", "one_step", "gt_noise_pairs"]

__all__ = [
    "TrainConfig", "TrainReport", "train", "one_step_augment", "make_scheme_targets",
    "split_by_scene", "approximation_baseline_mse", "evaluate_loss",
]


class TrainConfig(BaseModel):
    """Параметры предобучения."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    scheme: int = Field(2, ge=1, le=2)
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    noise: NoiseSpec = NoiseSpec()
    augmentations: frozenset[Augmentation] = frozenset()
    seed: int = 0
    validation_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    s_alpha: float = Field(0.001, ge=0.0)
    one_step_regularizer: RegularizerKind = RegularizerKind.SCHEME2_RESIDUAL
    gt_noise_rule: Literal["root", "mse"] = "root"

    @field_validator("augmentations", mode="before")
    @classmethod
    def _split(cls, v):
        if isinstance(v, str):
            return frozenset(part.strip() for part in v.split(",") if part.strip())
        return v

    @field_serializer("augmentations")
    def _sorted(self, v: frozenset[str]) -> list[str]:
        return sorted(v)

    @model_validator(mode="after")
    def _one_step_needs_scheme2(self) -> TrainConfig:
        if "one_step" in self.augmentations and self.scheme != 2:
            raise ValueError("one_step augmentation is defined for Scheme 2 only")
        if "interpolation" in self.augmentations and self.scheme != 2:
            raise ValueError("interpolation augmentation is defined for Scheme 2 only")
        if "gt_noise_pairs" in self.augmentations and self.scheme != 2:
            raise ValueError("gt_noise_pairs augmentation is defined for Scheme 2 only")
        return self


@dataclass
class TrainReport:
    """Кривые обучения; время и память в CSV не пишутся."""
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    sigma_effective: list[float] = field(default_factory=list)
    best_epoch: int = -1
    wall_time_sec: float = 0.0
    peak_rss_mb: float = 0.0
    checkpoint_path: str | None = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "final_train_loss": self.train_loss[-1] if self.train_loss else None,
            "best_val_loss": min(self.val_loss) if self.val_loss else None,
            "wall_time_sec": round(self.wall_time_sec, 1),
            "peak_rss_mb": round(self.peak_rss_mb, 1),
            "checkpoint_path": self.checkpoint_path,
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "sigma_effective"])
            for e, (t, v, s) in enumerate(zip(self.train_loss, self.val_loss, self.sigma_effective)):
                w.writerow([e, f"{t:.12g}", f"{v:.12g}", f"{s:.12g}"])
        return path


def split_by_scene(
    records: list[SampleRecord], fraction: float, seed: int,
) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Разбиение на обучение/валидацию по сценам (патчи одной сцены не разносятся)."""
    scenes = sorted({r.scene for r in records})
    n_val = int(round(len(scenes) * fraction))
    if fraction > 0 and n_val == 0 and len(scenes) > 1:
        n_val = 1
    order = np.random.default_rng([seed, 7]).permutation(len(scenes))
    val_scenes = {scenes[i] for i in order[:n_val]}
    train = [r for r in records if r.scene not in val_scenes]
    val = [r for r in records if r.scene in val_scenes]
    return train, val


def approximation_baseline_mse(records: list[SampleRecord]) -> float:
    """MSE между входом и целью: ошибка сети, которая ничего не меняет (схема 2)."""
    if not records:
        return 0.0
    return float(np.mean([np.mean((r.input - r.target) ** 2) for r in records]))


def _stack(records: list[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([r.input for r in records])[:, None]
    t = np.stack([r.target for r in records])[:, None]
    return x, t


def evaluate_loss(weights: WeightStore, records: list[SampleRecord], batch_size: int = 64) -> float:
    """Средний по пикселям MSE сети на записях (без ленты)."""
    if not records:
        raise ShapeError("evaluate_loss: empty record list")
    total, count = 0.0, 0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        x, t = _stack(chunk)
        pred = predict(weights, x[:, 0])
        total += float(np.sum((pred - t[:, 0]) ** 2))
        count += t.size
    return total / count


def one_step_augment(
    record: SampleRecord,
    weights: WeightStore,
    s_alpha: float = 0.001,
    kind: RegularizerKind = RegularizerKind.SCHEME2_RESIDUAL,
) -> SampleRecord:
    """Вход ← x̃ − s·α·∇R(x̃); цель не меняется."""
    if record.scheme != 2:
        raise ValueError(f"one_step_augment needs a Scheme-2 record, got scheme {record.scheme}")
    if s_alpha == 0.0:
        return record
    _, grad = regularizer_value_and_grad(kind, weights, record.input)
    return record.replace(input=record.input - s_alpha * grad, augmentation="one-step")


def _one_step_batch(
    records: list[SampleRecord], weights: WeightStore, cfg: TrainConfig,
) -> list[SampleRecord]:
    # образцы независимы, поэтому градиент суммы по батчу даёт градиенты каждого
    out = []
    for start in range(0, len(records), cfg.batch_size):
        chunk = records[start:start + cfg.batch_size]
        inputs = np.stack([r.input for r in chunk])
        _, grad = regularizer_value_and_grad(cfg.one_step_regularizer, weights, inputs)
        moved = inputs - cfg.s_alpha * grad
        out.extend(r.replace(input=moved[i], augmentation="one-step") for i, r in enumerate(chunk))
    return out


def prepare_epoch(
    records: list[SampleRecord],
    cfg: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
    snapshot: WeightStore | None = None,
) -> list[SampleRecord]:
    """Записи эпохи в детерминированном порядке: база, затем добавленные аугментации."""
    augs = cfg.augmentations
    base, extra, stepped = [], [], []
    for rec in records:
        r = rotate90_augment(rec, int(rng.integers(4))) if "rotate90" in augs else rec
        base.append(augment(r, cfg.noise, epoch, rng))
        if r.scheme == 2 and r.subset is Subset.X1:
            if "interpolation" in augs:
                extra.append(interpolation_augment(r, float(rng.uniform())))
            if snapshot is not None:
                stepped.append(r)
    if stepped:
        extra.extend(_one_step_batch(stepped, snapshot, cfg))
    return base + extra


def train(
    dataset: list[SampleRecord],
    net: NetworkSpec,
    cfg: TrainConfig,
    validation: list[SampleRecord] | None = None,
) -> tuple[WeightStore, TrainReport]:
    """Обучить сеть; вернуть веса лучшей эпохи по валидации и отчёт."""
    if not dataset:
        raise ShapeError("train: dataset is empty")
    if any(r.scheme != cfg.scheme for r in dataset):
        raise ConfigError(f"train: dataset contains records of a scheme other than {cfg.scheme}")
    if validation is None:
        dataset, validation = split_by_scene(dataset, cfg.validation_fraction, cfg.seed)
    if not validation:
        logger.warning("⚠️ Пустая валидация: лучшая эпоха выбирается по обучающей выборке")

    clock = WallClock()
    snap = take_snapshot()
    logger.info(f"🏋️ Обучение: {len(dataset)} записей, {cfg.epochs} эпох, схема {cfg.scheme}, "
                f"RSS {snap.process_rss_mb:.0f} МБ")

    weights = build_network(net, seed=cfg.seed)
    state = AdamState.zeros_like(weights.params)
    report = TrainReport()
    best_loss, best = np.inf, weights.copy()
    step = 0

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        snapshot = weights.copy() if "one_step" in cfg.augmentations and epoch >= 1 else None
        records = prepare_epoch(dataset, cfg, epoch, rng, snapshot)
        order = rng.permutation(len(records))

        losses = []
        for b, start in enumerate(range(0, len(records), cfg.batch_size)):
            x, t = _stack([records[i] for i in order[start:start + cfg.batch_size]])
            params = weights.parameter_tensors(requires_grad=True)
            try:
                with Tape() as tape:
                    loss = mse_loss(forward(weights, Tensor(x), params), Tensor(t))
                tape.backward(loss)
            except DivergenceError as e:
                raise DivergenceError(f"diverged at epoch {epoch}, batch {b}") from e
            step += 1
            adam_update(weights.params, {k: p.grad for k, p in params.items()}, state, step, lr=cfg.lr)
            if not all(np.all(np.isfinite(w)) for w in weights.params.values()):
                raise DivergenceError(f"diverged at epoch {epoch}, batch {b}")
            losses.append(loss.item())

        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(weights, validation) if validation else train_loss
        sigma = cfg.noise.effective_sigma(epoch)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.sigma_effective.append(sigma)
        if val_loss < best_loss:
            best_loss, best = val_loss, weights.copy()
            report.best_epoch = epoch
        clock.mark()
        logger.info(f"  📈 Эпоха {epoch + 1}/{cfg.epochs}: train={train_loss:.6g} val={val_loss:.6g} σ={sigma:.4g}")

    report.wall_time_sec = clock.elapsed
    report.peak_rss_mb = clock.peak_rss_mb
    logger.info(f"✅ Обучение завершено за {report.wall_time_sec:.1f}с, лучшая эпоха {report.best_epoch + 1}")
    return best, report
