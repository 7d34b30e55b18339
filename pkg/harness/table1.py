"""
Table1 — Матрица экспериментов: по одному конфигу на строку.

Каждая строка проходит generate → train → optimize → evaluate в своём
каталоге прогона. Завершённые этапы берутся из run.manifest, поэтому
прерванный прогон продолжается с места остановки. Ошибка строки
записывается в сводку, остальные строки продолжаются.

Сводка строится из comparison.csv каждой строки, а не из памяти,
чтобы повторный и возобновлённый прогоны давали одинаковые байты.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from core.errors import DivergenceError, MissingArtifactError, NettError
from core.settings import setup_logging, worker_count
from harness.commands import cmd_evaluate, cmd_generate, cmd_optimize, cmd_train, default_checkpoint
from harness.experiment import ExperimentConfig, load_experiment
from network.trainer import TrainConfig
from storage.manifest import RunManifest
from validation.pipeline import ComparisonReport

logger = logging.getLogger("nett.table1")

SUMMARY_FILE = "table1_summary.csv"
SUMMARY_COLUMNS = (
    "row", "scheme", "augmentation", "initial_rmse_d", "final_rmse_d", "final_rmse_v",
    "improved_scenes", "corr_d", "corr_v", "flag", "status",
)


def augmentation_label(train: TrainConfig) -> str:
    """Короткая подпись аугментаций строки: noise0.05/geo0.7+target_noise+interpolation."""
    parts: list[str] = []
    noise = train.noise
    if noise.sigma > 0:
        label = f"noise{noise.sigma:g}"
        if noise.schedule == "geometric":
            label += f"/geo{noise.ratio:g}"
        parts.append(label)
        if noise.target_rule == "input_derived":
            parts.append("target_noise")
    parts += sorted(train.augmentations)
    return "+".join(parts) or "clean"


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.12g}"


@dataclass
class SummaryRow:
    row: str
    scheme: int
    augmentation: str
    initial_rmse_d: float | None = None
    final_rmse_d: float | None = None
    final_rmse_v: float | None = None
    improved_scenes: int | None = None
    corr_d: float | None = None
    corr_v: float | None = None
    flag: str = ""
    status: str = "ok"

    def cells(self) -> list[str]:
        return [
            self.row, str(self.scheme), self.augmentation,
            _fmt(self.initial_rmse_d), _fmt(self.final_rmse_d), _fmt(self.final_rmse_v),
            "" if self.improved_scenes is None else str(self.improved_scenes),
            _fmt(self.corr_d), _fmt(self.corr_v), self.flag, self.status,
        ]


def qualitative_flag(cfg: ExperimentConfig, report: ComparisonReport) -> str:
    flags = []
    if report.improved_count >= cfg.eval.improved_threshold:
        flags.append("improves")
    else:
        flags.append("no_improvement")
    corr = report.mean("corr_d")
    if corr is None or abs(corr) < cfg.eval.weak_correlation:
        flags.append("weak_correlation")
    if any(r.status != "ok" for r in report.rows):
        flags.append("diverged_scenes")
    return "+".join(flags)


def run_row(cfg: ExperimentConfig, force: bool = False) -> None:
    """Довести строку до конца, пропуская отмеченные этапы."""
    run_dir = cfg.run_dir
    manifest = RunManifest.open(run_dir, cfg.run_name)

    if force or not manifest.has_stage("generate"):
        # каталог без отметки этапа остался от прерванного прогона
        cmd_generate(cfg, force=True)
    if force or not manifest.has_stage("train") or not default_checkpoint(cfg).exists():
        cmd_train(cfg)
    manifest = RunManifest.open(run_dir, cfg.run_name)
    if force or not manifest.has_stage("optimize:scene_000"):
        try:
            cmd_optimize(cfg, source="scene:0")
        except DivergenceError as e:
            # сцена 0 учитывается и в evaluate, там расходимость пишется в статус
            logger.warning(f"⚠️ {cfg.run_name}: optimize scene_000: {e}")
    if force or not manifest.has_stage("evaluate"):
        cmd_evaluate(cfg)


def summarize_row(name: str, cfg: ExperimentConfig) -> SummaryRow:
    summary = SummaryRow(row=name, scheme=cfg.train.scheme, augmentation=augmentation_label(cfg.train))
    path = cfg.run_dir / "evaluate" / "comparison.csv"
    if not path.exists():
        raise MissingArtifactError(f"comparison report not found: {path}")
    report = ComparisonReport.from_csv(path, cfg.run_name, cfg.train.scheme)
    summary.initial_rmse_d = report.mean("initial_rmse_d")
    summary.final_rmse_d = report.mean("nett_rmse_d")
    summary.final_rmse_v = report.mean("nett_rmse_v")
    summary.improved_scenes = report.improved_count
    summary.corr_d = report.mean("corr_d")
    summary.corr_v = report.mean("corr_v")
    summary.flag = qualitative_flag(cfg, report)
    return summary


def _row_job(args: tuple[str, int | None, str | None, bool]) -> list[str]:
    """Одна строка в отдельном процессе; исключения превращаются в статус."""
    path, seed, out, force = args
    setup_logging()
    name = Path(path).stem
    try:
        cfg = load_experiment(path).with_overrides(seed=seed, output_dir=Path(out) if out else None)
    except NettError as e:
        return SummaryRow(row=name, scheme=0, augmentation="", status=f"failed: {e}").cells()
    try:
        run_row(cfg, force=force)
        return summarize_row(name, cfg).cells()
    except Exception as e:
        logger.error(f"❌ Строка {name}: {e}")
        failed = SummaryRow(row=name, scheme=cfg.train.scheme, augmentation=augmentation_label(cfg.train),
                            status=f"failed: {type(e).__name__}: {e}")
        return failed.cells()


def config_files(config_dir: str | Path) -> list[Path]:
    directory = Path(config_dir)
    if not directory.is_dir():
        raise MissingArtifactError(f"config directory not found: {directory}")
    files = sorted(directory.glob("*.cfg"))
    if not files:
        raise MissingArtifactError(f"no *.cfg files in {directory}")
    return files


def cmd_table1(
    config_dir: str | Path,
    out: str | Path | None = None,
    seed: int | None = None,
    workers: int | None = None,
    force: bool = False,
) -> Path:
    """Прогнать все строки и записать сводку в <out>/table1_summary.csv."""
    files = config_files(config_dir)
    workers = min(workers or worker_count(), len(files))
    jobs = [(str(p), seed, str(out) if out else None, force) for p in files]
    logger.info(f"📋 Матрица экспериментов: {len(files)} строк, процессов: {workers}")

    if workers == 1:
        rows = [_row_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_row_job, jobs))

    root = Path(out) if out else Path("runs")
    root.mkdir(parents=True, exist_ok=True)
    path = root / SUMMARY_FILE
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(rows)

    failed = sum(1 for r in rows if r[-1] != "ok")
    icon = "✅" if not failed else "⚠️"
    logger.info(f"{icon} Сводка матрицы: {path} ({len(rows) - failed}/{len(rows)} строк без ошибок)")
    return path
