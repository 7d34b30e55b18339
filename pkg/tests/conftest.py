"""Общие фикстуры: путь к пакету, маркер slow, крошечная конфигурация прогона."""

from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from network.regnet import build_network, tiny_unet  # noqa: E402

TINY_CONFIG = """\
# крошечный прогон для тестов: сцены 32x32, патчи 16x16
run_name={run_name}
seed={seed}
output_dir={output_dir}
dataset.scene.height=32
dataset.scene.width=32
dataset.train_count=16
dataset.val_count=8
dataset.patch=16
dataset.stride=16
train.scheme={scheme}
train.epochs=2
train.batch_size=8
nett.iterations=3
nett.regularizer={regularizer}
eval.test_scenes=2
eval.audit_samples=4
eval.probe_scales=1,10,100
"""


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run (minutes)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_weights():
    return build_network(tiny_unet(), seed=0)


@pytest.fixture
def write_config(tmp_path):
    """Записать крошечный конфиг; возвращает путь к файлу."""

    def _write(name: str = "tiny", seed: int = 3, scheme: int = 2, extra: str = "",
               directory: Path | None = None, output_dir: Path | None = None) -> Path:
        directory = directory or tmp_path
        directory.mkdir(parents=True, exist_ok=True)
        regularizer = "scheme1_norm" if scheme == 1 else "scheme2_residual"
        text = TINY_CONFIG.format(run_name=name, seed=seed, scheme=scheme, regularizer=regularizer,
                                  output_dir=output_dir or tmp_path / "runs")
        path = directory / f"{name}.cfg"
        path.write_text(text + extra)
        return path

    return _write
