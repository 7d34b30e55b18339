"""
Experiment — Конфигурация эксперимента из плоского файла key=value.

    # строка матрицы: схема 2, шум σ=0.03
    run_name=row04
    train.scheme=2
    train.noise.sigma=0.03
    dataset.scene.cubes=1,3

Точки в ключах задают вложенность, запятые — кортежи. Неизвестный ключ
или недопустимое значение → ConfigError с именем ключа.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError, MissingArtifactError
from core.sampling import SamplerSpec
from network.regnet import DEFAULT_SLOPE, NetworkSpec, preset_spec
from network.trainer import TrainConfig
from scenes.generator import SceneSpec
from solver.nett import NettConfig
from storage.manifest import SNAPSHOT_FILE
from validation.metrics import RenderSpec

logger = logging.getLogger("nett.experiment")


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scene: SceneSpec = SceneSpec()
    sampler: SamplerSpec = SamplerSpec()
    train_count: int = Field(2000, ge=1)
    val_count: int = Field(500, ge=0)
    patch: int = Field(32, ge=4)
    stride: int = Field(32, ge=1)
    split_fraction: float = Field(0.5, ge=0.0, le=1.0)

    @property
    def patches_per_scene(self) -> int:
        rows = (self.scene.height - self.patch) // self.stride + 1
        cols = (self.scene.width - self.patch) // self.stride + 1
        return max(rows, 0) * max(cols, 0)


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: str = "tiny-unet"
    slope: float = Field(DEFAULT_SLOPE, gt=0.0, lt=1.0)
    final_skip: bool = False

    def spec(self) -> NetworkSpec:
        return preset_spec(self.preset, slope=self.slope, final_skip=self.final_skip)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    test_scenes: int = Field(10, ge=1)
    probe_scales: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    audit_samples: int = Field(200, ge=1)
    improved_threshold: int = Field(8, ge=0)     # сцен с RMSE_d(итог) ≤ RMSE_d(старт)
    weak_correlation: float = Field(0.5, ge=0.0, le=1.0)
    scatter: bool = True


class ExperimentConfig(BaseModel):
    """Полная конфигурация одного прогона (одна строка матрицы экспериментов)."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    run_name: str = "desk"
    seed: int = 0
    output_dir: Path = Path("runs")
    dataset: DatasetConfig = DatasetConfig()
    network: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    nett: NettConfig = NettConfig()
    render: RenderSpec = RenderSpec()
    eval: EvalConfig = EvalConfig()

    @model_validator(mode="after")
    def _check_divisibility(self) -> ExperimentConfig:
        # патч и сцена проходят через F и через пулы сети
        factor = self.dataset.sampler.factor
        pools = self.network.spec().pool_count
        multiple = math.lcm(factor, 2 ** pools)
        if self.dataset.patch % multiple:
            raise ValueError(f"dataset.patch={self.dataset.patch} must be divisible by {multiple} "
                             f"(sampler factor {factor}, {pools} pools)")
        scene = self.dataset.scene
        if scene.height % multiple or scene.width % multiple:
            raise ValueError(f"dataset.scene {scene.height}x{scene.width} must be divisible by {multiple} "
                             f"(sampler factor {factor}, {pools} pools)")
        return self

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.run_name

    def with_overrides(self, seed: int | None = None, output_dir: Path | None = None) -> ExperimentConfig:
        """--seed меняет и мастер-seed, и seed обучения; --out — корень прогонов."""
        update: dict[str, Any] = {}
        if seed is not None:
            update["seed"] = seed
            update["train"] = self.train.model_copy(update={"seed": seed})
        if output_dir is not None:
            update["output_dir"] = Path(output_dir)
        return self.model_copy(update=update) if update else self


def _unflatten(flat: dict[str, str]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, raw in flat.items():
        parts = key.strip().split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"config key {key!r} conflicts with scalar key {part!r}", code="config")
            node = child
        value: Any = raw.strip()
        if "," in value:
            value = [v.strip() for v in value.split(",")]
        node[parts[-1]] = value
    return nested


def _flatten(data: dict[str, Any], prefix: str = "") -> dict[str, str]:
    flat: dict[str, str] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        elif isinstance(value, (list, tuple)):
            flat[name] = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            flat[name] = "true" if value else "false"
        else:
            flat[name] = str(value)
    return flat


def parse_experiment(flat: dict[str, str | None], source: str = "<config>") -> ExperimentConfig:
    missing = [k for k, v in flat.items() if v is None]
    if missing:
        raise ConfigError(f"{source}: key {missing[0]!r} has no value", code="config")
    try:
        return ExperimentConfig.model_validate(_unflatten(flat))
    except ValidationError as e:
        err = e.errors()[0]
        key = ".".join(str(p) for p in err["loc"])
        if not key:
            raise ConfigError(f"{source}: invalid config: {err['msg']}", code="config") from e
        raise ConfigError(f"{source}: invalid config key {key!r}: {err['msg']}", code="config") from e


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"config not found: {path}")
    cfg = parse_experiment(dotenv_values(path, interpolate=False), source=str(path))
    logger.debug(f"Конфигурация {path}: прогон {cfg.run_name}")
    return cfg


def snapshot_lines(cfg: ExperimentConfig) -> list[str]:
    flat = _flatten(cfg.model_dump(mode="json"))
    return [f"{k}={v}" for k, v in sorted(flat.items())]


def write_snapshot(cfg: ExperimentConfig, directory: str | Path) -> Path:
    """Разрешённая конфигурация прогона; файл снова читается load_experiment."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / SNAPSHOT_FILE
    path.write_text("\n".join(snapshot_lines(cfg)) + "\n")
    return path
