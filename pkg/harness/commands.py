"""
Commands — Подкоманды лаборатории: generate, train, optimize, evaluate, probe, audit.

Каталог прогона <output_dir>/<run_name>/:
    config.snapshot, run.manifest
    dataset/{train,val}/     — тензорные файлы + manifest.txt
    train/                   — checkpoint.nett, report.csv, loss.png, sample.png
    optimize/<вход>/         — result.<fmt>, trace.csv, trace.png, scatter.png, images.png
    evaluate/                — comparison.csv, renders/scene_XXX.png
    probe/probe_<kind>.csv, audit/audit.csv
"""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.errors import ArtifactExistsError, ConfigError, MissingArtifactError
from core.sampling import DepthImage
from harness import plots
from harness.experiment import ExperimentConfig, write_snapshot
from network.checkpoint import load_checkpoint, save_checkpoint
from network.regnet import WeightStore, predict
from network.trainer import TrainReport, approximation_baseline_mse, train
from scenes.dataset import SampleRecord, Subset, build_dataset, export_dataset, import_dataset
from scenes.generator import generate_scenes
from solver.nett import (
    AuditReport, MetricTrace, RegularizerKind, TraceCorrelation,
    coercivity_probe, correlate_trace, cross_term_audit, nett_optimize,
)
from storage.depth_io import DepthFormat, read_depth, write_depth
from storage.manifest import RunManifest
from validation.pipeline import ComparisonPipeline, ComparisonReport

logger = logging.getLogger("nett.commands")

CHECKPOINT_NAME = "checkpoint.nett"

# независимые потоки сцен от мастер-seed
STREAM_DATASET = 0
STREAM_TEST = 1


def _manifest(cfg: ExperimentConfig) -> RunManifest:
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.open(run_dir, cfg.run_name)
    manifest.add_file(write_snapshot(cfg, run_dir))
    return manifest


def evaluation_scenes(cfg: ExperimentConfig, count: int | None = None) -> list[DepthImage]:
    """Тестовые сцены: отдельный поток seed, не пересекается с датасетом."""
    count = count or cfg.eval.test_scenes
    return generate_scenes(cfg.dataset.scene, count, [cfg.seed, STREAM_TEST])


def default_checkpoint(cfg: ExperimentConfig) -> Path:
    return cfg.run_dir / "train" / CHECKPOINT_NAME


def _load_weights(cfg: ExperimentConfig, checkpoint: str | Path | None) -> WeightStore:
    path = Path(checkpoint) if checkpoint else default_checkpoint(cfg)
    return load_checkpoint(path, cfg.network.spec())


# ============================================================
# generate
# ============================================================

def build_records(cfg: ExperimentConfig) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Обучающие и валидационные записи; сцены валидации не пересекаются с обучением."""
    ds = cfg.dataset
    per_scene = ds.patches_per_scene
    if per_scene < 1:
        raise ConfigError(f"patch {ds.patch} does not fit into {ds.scene.height}x{ds.scene.width} scenes")
    n_train = math.ceil(ds.train_count / per_scene)
    n_val = math.ceil(ds.val_count / per_scene)
    scenes = generate_scenes(ds.scene, n_train + n_val, [cfg.seed, STREAM_DATASET])
    gt_noise = "gt_noise_pairs" in cfg.train.augmentations
    common = dict(scheme=cfg.train.scheme, sampler=ds.sampler, patch=ds.patch, stride=ds.stride,
                  split_fraction=ds.split_fraction)
    train_records = build_dataset(
        scenes[:n_train], seed=cfg.seed, gt_noise_pairs=gt_noise,
        gt_noise_rule=cfg.train.gt_noise_rule, max_patches=ds.train_count, **common,
    )
    val_records = build_dataset(
        scenes[n_train:], seed=cfg.seed + 1, max_patches=ds.val_count, scene_offset=n_train, **common,
    ) if n_val else []
    return train_records, val_records


def cmd_generate(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Построить датасет и записать его в <run>/dataset."""
    out = cfg.run_dir / "dataset"
    if out.exists():
        if not force:
            raise ArtifactExistsError(f"dataset directory {out} exists; pass --force to overwrite")
        shutil.rmtree(out)
    manifest = _manifest(cfg)
    manifest.forget("dataset")
    train_records, val_records = build_records(cfg)
    export_dataset(train_records, out / "train")
    export_dataset(val_records, out / "val")
    manifest.add_tree("dataset")
    manifest.mark_stage("generate")
    logger.info(f"📦 Датасет записан: {out} ({len(train_records)} train / {len(val_records)} val)")
    return out


def load_records(cfg: ExperimentConfig) -> tuple[list[SampleRecord], list[SampleRecord]]:
    root = cfg.run_dir / "dataset"
    if not (root / "train").exists():
        raise MissingArtifactError(f"dataset not found under {root}; run 'generate' first")
    train_records = import_dataset(root / "train")
    val_dir = root / "val"
    val_records = import_dataset(val_dir) if (val_dir / "manifest.txt").exists() else []
    return train_records, val_records


# ============================================================
# train
# ============================================================

def cmd_train(cfg: ExperimentConfig) -> tuple[Path, TrainReport]:
    train_records, val_records = load_records(cfg)
    manifest = _manifest(cfg)
    weights, report = train(train_records, cfg.network.spec(), cfg.train, validation=val_records or None)

    out = cfg.run_dir / "train"
    ckpt = save_checkpoint(weights, out / CHECKPOINT_NAME)
    report.checkpoint_path = str(ckpt)
    report.to_csv(out / "report.csv")
    plots.plot_loss_curves(report, out / "loss.png")
    if val_records:
        sample = next((r for r in val_records if r.subset is Subset.X1), val_records[0])
        plots.plot_images({"input": sample.input, "output": predict(weights, sample.input),
                           "ground truth": sample.gt()}, out / "sample.png")
        logger.info(f"📉 Базовая MSE приближения: {approximation_baseline_mse(val_records):.6g}, "
                    f"лучшая валидационная: {min(report.val_loss):.6g}")
    manifest.add_tree("train")
    manifest.mark_stage("train")
    return ckpt, report


# ============================================================
# optimize
# ============================================================

@dataclass
class OptimizeResult:
    out_dir: Path
    result: DepthImage
    trace: MetricTrace
    correlation: TraceCorrelation | None


def _crop(gt: DepthImage, multiple: int) -> DepthImage:
    h, w = gt.shape
    return gt[: h - h % multiple, : w - w % multiple]


def resolve_input(cfg: ExperimentConfig, source: str, fmt: str | None = None) -> tuple[str, DepthImage]:
    """'scene:<i>' — тестовая сцена; иначе путь к файлу глубины (как GT высокого разрешения)."""
    if source.startswith("scene:"):
        try:
            index = int(source.split(":", 1)[1])
        except ValueError as e:
            raise ConfigError(f"bad scene reference {source!r}") from e
        if index < 0:
            raise ConfigError(f"bad scene reference {source!r}")
        return f"scene_{index:03d}", evaluation_scenes(cfg, index + 1)[index]
    gt = read_depth(source, fmt)
    multiple = cfg.dataset.sampler.factor * 2 ** cfg.network.spec().pool_count
    cropped = _crop(gt, multiple)
    if cropped.size == 0:
        raise ConfigError(f"{source}: image {gt.shape} is smaller than {multiple}x{multiple}")
    return Path(source).stem, cropped


def cmd_optimize(
    cfg: ExperimentConfig,
    checkpoint: str | Path | None = None,
    source: str = "scene:0",
    fmt: DepthFormat | str = DepthFormat.PFM,
    input_format: str | None = None,
) -> OptimizeResult:
    weights = _load_weights(cfg, checkpoint)
    tag, gt = resolve_input(cfg, source, input_format)
    manifest = _manifest(cfg)
    sampler = cfg.dataset.sampler
    y = sampler.forward(gt)
    x, trace = nett_optimize(y, weights, cfg.nett, gt, sampler, cfg.render)

    fmt = DepthFormat(fmt)
    out = cfg.run_dir / "optimize" / tag
    out.mkdir(parents=True, exist_ok=True)
    suffix = {DepthFormat.PNG16: "png", DepthFormat.PFM: "pfm", DepthFormat.RAW: "tensor"}[fmt]
    write_depth(x, out / f"result.{suffix}", fmt)
    trace.to_csv(out / "trace.csv")
    plots.plot_trace(trace, out / "trace.png")
    plots.plot_images({"approximation": sampler.approximate(y), "result": x, "ground truth": gt},
                      out / "images.png")

    correlation = None
    if len(trace) >= 3:
        correlation = correlate_trace(trace)
        if cfg.eval.scatter:
            plots.plot_functional_scatter(trace, out / "scatter.png")
        logger.info(f"📐 Корреляция функционала: RMSE_d {correlation.functional_rmse_d}, "
                    f"RMSE_v {correlation.functional_rmse_v}")
    first, last = trace.rows[0], trace.rows[-1]
    logger.info(f"🎯 {tag}: RMSE_d {first.rmse_d:.5g} → {last.rmse_d:.5g}, RMSE_v {first.rmse_v:.5g} → {last.rmse_v:.5g}")
    manifest.add_tree(Path("optimize") / tag)
    manifest.mark_stage(f"optimize:{tag}")
    return OptimizeResult(out, x, trace, correlation)


# ============================================================
# evaluate / probe / audit
# ============================================================

def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str | Path | None = None) -> ComparisonReport:
    weights = _load_weights(cfg, checkpoint)
    manifest = _manifest(cfg)
    out = cfg.run_dir / "evaluate"
    pipeline = ComparisonPipeline(weights, cfg.nett, cfg.dataset.sampler, cfg.render, cfg.train.scheme)
    report = pipeline.run(evaluation_scenes(cfg), cfg.run_name, render_dir=out / "renders")
    report.to_csv(out / "comparison.csv")
    manifest.add_tree("evaluate")
    manifest.mark_stage("evaluate")
    return report


def cmd_probe(
    cfg: ExperimentConfig,
    kind: str,
    checkpoint: str | Path | None = None,
    scales: list[float] | None = None,
) -> Path:
    """Таблица коэрцитивности R(t·x0) по первой тестовой сцене."""
    reg = RegularizerKind.parse(kind)
    weights = _load_weights(cfg, checkpoint)
    manifest = _manifest(cfg)
    x0 = evaluation_scenes(cfg, 1)[0]
    probe = coercivity_probe(reg, weights, x0, list(scales or cfg.eval.probe_scales))
    path = probe.to_csv(_ensure(cfg.run_dir / "probe") / f"probe_{reg.value}.csv")
    flag = "✅ растёт" if probe.strictly_increasing else "⚠️ не монотонно"
    logger.info(f"📏 Пробник коэрцитивности {reg.value}: {flag}")
    manifest.add_file(path)
    manifest.mark_stage(f"probe:{reg.value}")
    return path


def cmd_audit(cfg: ExperimentConfig, checkpoint: str | Path | None = None) -> AuditReport:
    """Аудит перекрёстного члена на X1-входах валидации."""
    weights = _load_weights(cfg, checkpoint)
    _, val_records = load_records(cfg)
    inputs = [r.input for r in val_records if r.subset is Subset.X1][: cfg.eval.audit_samples]
    if not inputs:
        raise MissingArtifactError("audit needs X1 validation records; dataset has none")
    manifest = _manifest(cfg)
    kind = RegularizerKind.for_scheme(cfg.train.scheme, cfg.train.one_step_regularizer)
    report = cross_term_audit(np.stack(inputs), weights, cfg.train.s_alpha, kind)
    path = report.to_csv(_ensure(cfg.run_dir / "audit") / "audit.csv")
    manifest.add_file(path)
    manifest.mark_stage("audit")
    return report


def _ensure(directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    return directory
