"""
Plots — Графики прогонов (matplotlib, бэкенд Agg).

Источник истины — CSV рядом с картинкой; PNG только для просмотра.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.tensor import Array  # noqa: E402
from network.trainer import TrainReport  # noqa: E402
from solver.nett import MetricTrace  # noqa: E402

_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return path


def plot_loss_curves(report: TrainReport, path: str | Path) -> Path:
    """Обучающая ошибка (линейная шкала) и валидационная (логарифмическая)."""
    epochs = np.arange(1, report.epochs + 1)
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    axes[0].plot(epochs, report.train_loss, marker="o")
    axes[0].set_title("train loss")
    axes[1].semilogy(epochs, report.val_loss, marker="o", color="tab:orange")
    axes[1].set_title("validation loss")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_images(images: dict[str, Array], path: str | Path, cmap: str = "viridis") -> Path:
    """Ряд карт глубины в общей цветовой шкале."""
    values = np.concatenate([np.ravel(v) for v in images.values()])
    lo, hi = float(values.min()), float(values.max())
    fig, axes = plt.subplots(1, len(images), figsize=(3.2 * len(images), 3.2), squeeze=False)
    for ax, (title, img) in zip(axes[0], images.items()):
        ax.imshow(img, cmap=cmap, vmin=lo, vmax=hi)
        ax.set_title(title)
        ax.axis("off")
    return _save(fig, path)


def plot_trace(trace: MetricTrace, path: str | Path) -> Path:
    """RMSE_d и RMSE_v по итерациям."""
    it = trace.column("iteration")
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for ax, name in zip(axes, ("rmse_d", "rmse_v")):
        ax.plot(it, trace.column(name), marker=".")
        ax.set_title(f"{name} to ground truth")
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_functional_scatter(trace: MetricTrace, path: str | Path) -> Path:
    """Функционал против RMSE_d и RMSE_v (по точке на итерацию)."""
    f = trace.column("functional")
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for ax, name in zip(axes, ("rmse_d", "rmse_v")):
        ax.scatter(f, trace.column(name), c=trace.column("iteration"), cmap="plasma", s=12)
        ax.set_xlabel("functional")
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
    return _save(fig, path)
