"""
Pipeline — Сравнение методов на тестовых сценах.

Для каждой сцены x (высокое разрешение) и наблюдения y = F(x):
1. Bilinear — билинейное повышение разрешения y
2. CNN      — прямой выход сети на x̃ = upsample(y) (схема 1: x̃ + Φ(x̃))
3. NETT     — вариационная оптимизация из x̃

Все три метода получают один и тот же y. Сцены обрабатываются
параллельно (по потоку на сцену), веса только читаются.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.errors import DivergenceError
from core.sampling import DepthImage, SamplerSpec, bilinear_upsample, upsample
from core.settings import worker_count
from network.regnet import WeightStore, predict
from solver.nett import MetricTrace, NettConfig, TraceCorrelation, correlate_trace, nett_optimize
from storage.depth_io import write_render_png
from validation.metrics import RenderSpec, render, rmse_d, rmse_v

logger = logging.getLogger("nett.pipeline")

COLUMNS = (
    "scene", "bilinear_rmse_d", "bilinear_rmse_v", "cnn_rmse_d", "cnn_rmse_v",
    "nett_rmse_d", "nett_rmse_v", "initial_rmse_d", "corr_d", "corr_v", "status",
)


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.12g}"


@dataclass
class SceneComparison:
    """Метрики трёх методов на одной сцене."""
    scene: int
    bilinear_rmse_d: float
    bilinear_rmse_v: float
    cnn_rmse_d: float
    cnn_rmse_v: float
    nett_rmse_d: float | None
    nett_rmse_v: float | None
    initial_rmse_d: float
    corr_d: float | None = None
    corr_v: float | None = None
    status: str = "ok"          # ok | diverged: ...

    @property
    def improved(self) -> bool:
        return self.nett_rmse_d is not None and self.nett_rmse_d <= self.initial_rmse_d

    def row(self) -> list[str]:
        return [str(self.scene)] + [
            _fmt(getattr(self, c)) for c in COLUMNS[1:-1]
        ] + [self.status]


@dataclass
class ComparisonReport:
    """Отчёт сравнения Bilinear / CNN / NETT."""
    run_name: str
    scheme: int
    rows: list[SceneComparison] = field(default_factory=list)
    traces: list[MetricTrace | None] = field(default_factory=list)

    @property
    def improved_count(self) -> int:
        return sum(1 for r in self.rows if r.improved)

    def mean(self, column: str) -> float | None:
        values = [getattr(r, column) for r in self.rows if getattr(r, column) is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> dict:
        return {
            "run_name": self.run_name,
            "scheme": self.scheme,
            "scenes": len(self.rows),
            "improved_scenes": self.improved_count,
            "bilinear_rmse_d": self.mean("bilinear_rmse_d"),
            "cnn_rmse_d": self.mean("cnn_rmse_d"),
            "nett_rmse_d": self.mean("nett_rmse_d"),
            "nett_rmse_v": self.mean("nett_rmse_v"),
            "corr_d": self.mean("corr_d"),
            "corr_v": self.mean("corr_v"),
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow(r.row())
        return path

    @classmethod
    def from_csv(cls, path: str | Path, run_name: str, scheme: int) -> ComparisonReport:
        def num(v: str) -> float | None:
            return float(v) if v != "" else None

        report = cls(run_name=run_name, scheme=scheme)
        with Path(path).open(newline="") as f:
            for rec in csv.DictReader(f):
                report.rows.append(SceneComparison(
                    scene=int(rec["scene"]),
                    **{c: num(rec[c]) for c in COLUMNS[1:-1]},
                    status=rec["status"],
                ))
        return report


@dataclass
class SceneResult:
    comparison: SceneComparison
    trace: MetricTrace | None
    images: dict[str, DepthImage]


class ComparisonPipeline:
    """Прогон трёх методов по набору сцен."""

    def __init__(
        self,
        weights: WeightStore,
        nett_cfg: NettConfig,
        sampler: SamplerSpec,
        render_spec: RenderSpec,
        scheme: int,
    ):
        self.weights = weights
        self.nett_cfg = nett_cfg
        self.sampler = sampler
        self.render_spec = render_spec
        self.scheme = scheme

    def cnn_output(self, approx: DepthImage) -> DepthImage:
        out = predict(self.weights, approx)
        return approx + out if self.scheme == 1 else out

    def evaluate_scene(self, index: int, gt: DepthImage) -> SceneResult:
        rs = self.render_spec
        y = self.sampler.forward(gt)
        bilinear = bilinear_upsample(y, self.sampler.factor)
        approx = upsample(y, self.sampler.factor, self.nett_cfg.init)
        cnn = self.cnn_output(approx)

        trace: MetricTrace | None = None
        nett_x: DepthImage | None = None
        status = "ok"
        corr = TraceCorrelation(None, None)
        try:
            nett_x, trace = nett_optimize(y, self.weights, self.nett_cfg, gt, self.sampler, rs)
            if len(trace) >= 3:
                corr = correlate_trace(trace)
        except DivergenceError as e:
            status = f"diverged: {e}"
            trace = e.trace
            logger.warning(f"❌ Сцена {index}: {status}")

        comparison = SceneComparison(
            scene=index,
            bilinear_rmse_d=rmse_d(bilinear, gt),
            bilinear_rmse_v=rmse_v(bilinear, gt, rs),
            cnn_rmse_d=rmse_d(cnn, gt),
            cnn_rmse_v=rmse_v(cnn, gt, rs),
            nett_rmse_d=None if nett_x is None else rmse_d(nett_x, gt),
            nett_rmse_v=None if nett_x is None else rmse_v(nett_x, gt, rs),
            initial_rmse_d=rmse_d(approx, gt),
            corr_d=corr.functional_rmse_d,
            corr_v=corr.functional_rmse_v,
            status=status,
        )
        images = {"gt": gt, "bilinear": bilinear, "cnn": cnn}
        if nett_x is not None:
            images["nett"] = nett_x
        return SceneResult(comparison, trace, images)

    def run(
        self,
        scenes: list[DepthImage],
        run_name: str,
        render_dir: str | Path | None = None,
        workers: int | None = None,
    ) -> ComparisonReport:
        workers = workers or worker_count()
        indices = range(len(scenes))
        logger.info(f"🧪 Сравнение: {len(scenes)} сцен, схема {self.scheme}, {self.nett_cfg.iterations} итераций NETT")
        if workers == 1 or len(scenes) < 2:
            results = [self.evaluate_scene(i, s) for i, s in zip(indices, scenes)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self.evaluate_scene, indices, scenes))

        report = ComparisonReport(run_name=run_name, scheme=self.scheme)
        for res in results:
            report.rows.append(res.comparison)
            report.traces.append(res.trace)
            if render_dir is not None:
                strip = np.hstack([render(img, self.render_spec) for img in res.images.values()])
                write_render_png(strip, Path(render_dir) / f"scene_{res.comparison.scene:03d}.png")

        icon = "✅" if report.improved_count == len(report.rows) else "📊"
        logger.info(f"{icon} NETT улучшил RMSE_d на {report.improved_count}/{len(report.rows)} сценах")
        return report
