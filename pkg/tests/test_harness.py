import csv
from pathlib import Path

import numpy as np
import pytest

from core.errors import ArtifactExistsError, ConfigError, MissingArtifactError
from core.sampling import bilinear_upsample, box_downsample, pseudo_inverse_upsample
from harness import commands
from harness.experiment import ExperimentConfig, load_experiment, parse_experiment, write_snapshot
from harness.table1 import SUMMARY_COLUMNS, augmentation_label, cmd_table1
from network.checkpoint import save_checkpoint
from network.regnet import build_network, tiny_unet
from network.trainer import TrainConfig
from nett_cli import main
from storage.depth_io import read_depth, write_depth
from storage.manifest import MANIFEST_FILE, RunManifest
from validation.metrics import rmse_d


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ============================================================
# Конфигурация
# ============================================================

class TestConfig:
    def test_defaults(self):
        cfg = parse_experiment({})
        assert cfg.dataset.sampler.factor == 4
        assert cfg.network.spec().preset == "tiny-unet"

    def test_dotted_keys_and_lists(self):
        cfg = parse_experiment({"train.noise.sigma": "0.03", "dataset.scene.cubes": "1, 3",
                                "train.augmentations": "rotate90,interpolation"})
        assert cfg.train.noise.sigma == 0.03
        assert cfg.dataset.scene.cubes == (1, 3)
        assert cfg.train.augmentations == frozenset({"rotate90", "interpolation"})

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="train.momentum"):
            parse_experiment({"train.momentum": "0.9"})

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="nett.regularizer"):
            parse_experiment({"nett.regularizer": "tv"})

    def test_snapshot_reloads_equal(self, write_config, tmp_path):
        cfg = load_experiment(write_config(extra="train.augmentations=rotate90\n"))
        snap = write_snapshot(cfg, tmp_path / "snap")
        assert load_experiment(snap) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_experiment(tmp_path / "none.cfg")

    def test_overrides(self, tmp_path):
        cfg = ExperimentConfig().with_overrides(seed=5, output_dir=tmp_path)
        assert (cfg.seed, cfg.train.seed) == (5, 5)
        assert cfg.run_dir == tmp_path / "desk"

    def test_augmentation_label(self):
        train = TrainConfig(noise={"sigma": 0.05, "schedule": "geometric", "ratio": 0.7,
                                   "target_rule": "input_derived"},
                            augmentations="interpolation")
        assert augmentation_label(train) == "noise0.05/geo0.7+target_noise+interpolation"
        assert augmentation_label(TrainConfig()) == "clean"


# ============================================================
# CLI
# ============================================================

class TestCli:
    def test_unknown_key_exits_2(self, write_config):
        assert main(["train", "--config", str(write_config(extra="train.momentum=0.9\n"))]) == 2

    def test_missing_checkpoint_exits_3(self, write_config):
        assert main(["optimize", "--config", str(write_config())]) == 3

    def test_bad_kind_exits_2(self, write_config):
        assert main(["probe", "--config", str(write_config()), "--kind", "tv"]) == 2

    def test_missing_dataset_exits_3(self, write_config):
        assert main(["train", "--config", str(write_config())]) == 3

    def test_patch_not_divisible_exits_2(self, write_config):
        assert main(["generate", "--config", str(write_config(extra="dataset.patch=30\n"))]) == 2

    def test_scene_not_divisible_exits_2(self, write_config):
        path = write_config(extra="dataset.scene.height=30\ndataset.patch=8\n")
        with pytest.raises(ConfigError, match="30x32"):
            load_experiment(path)
        assert main(["generate", "--config", str(path)]) == 2

    def test_gt_noise_pairs_scheme1_exits_2(self, write_config):
        path = write_config(scheme=1, extra="train.augmentations=gt_noise_pairs\n")
        assert main(["generate", "--config", str(path)]) == 2

    def test_generate_twice_needs_force(self, write_config):
        path = str(write_config())
        assert main(["generate", "--config", path]) == 0
        assert main(["generate", "--config", path]) == 2


class TestGenerate:
    def test_regenerate_is_deterministic(self, write_config):
        cfg = load_experiment(write_config())
        commands.cmd_generate(cfg)
        first = (cfg.run_dir / MANIFEST_FILE).read_bytes()
        with pytest.raises(ArtifactExistsError):
            commands.cmd_generate(cfg)
        commands.cmd_generate(cfg, force=True)
        assert (cfg.run_dir / MANIFEST_FILE).read_bytes() == first
        manifest = RunManifest.load(cfg.run_dir)
        assert manifest.has_stage("generate")
        assert manifest.verify() == []

    def test_record_counts(self, write_config):
        cfg = load_experiment(write_config())
        train_records, val_records = commands.build_records(cfg)
        assert len(train_records) == 16
        assert len(val_records) == 8
        assert {r.scene for r in train_records}.isdisjoint({r.scene for r in val_records})

    def test_patch_larger_than_scene(self, write_config):
        cfg = load_experiment(write_config(extra="dataset.patch=64\n"))
        with pytest.raises(ConfigError):
            commands.build_records(cfg)


# ============================================================
# Полный крошечный прогон
# ============================================================

@pytest.fixture
def trained(write_config):
    cfg = load_experiment(write_config())
    commands.cmd_generate(cfg)
    commands.cmd_train(cfg)
    return cfg


class TestPipeline:
    def test_train_artifacts(self, trained):
        out = trained.run_dir / "train"
        for name in ("checkpoint.nett", "report.csv", "loss.png", "sample.png"):
            assert (out / name).exists()
        assert len(_rows(out / "report.csv")) == 2

    def test_optimize(self, trained):
        result = commands.cmd_optimize(trained, source="scene:1")
        assert result.out_dir.name == "scene_001"
        assert len(_rows(result.out_dir / "trace.csv")) == 4
        assert result.correlation is not None
        np.testing.assert_allclose(read_depth(result.out_dir / "result.pfm"), result.result, atol=1e-6)
        assert RunManifest.load(trained.run_dir).has_stage("optimize:scene_001")

    def test_evaluate(self, trained):
        report = commands.cmd_evaluate(trained)
        rows = _rows(trained.run_dir / "evaluate" / "comparison.csv")
        assert len(rows) == len(report.rows) == 2
        for row, gt in zip(rows, commands.evaluation_scenes(trained)):
            expected = rmse_d(bilinear_upsample(box_downsample(gt, 4), 4), gt)
            assert float(row["bilinear_rmse_d"]) == pytest.approx(expected, rel=1e-10)
        assert (trained.run_dir / "evaluate" / "renders" / "scene_000.png").exists()

    def test_probe_rows_match_scales(self, trained):
        path = commands.cmd_probe(trained, "coercive_skip")
        rows = _rows(path)
        assert [float(r["t"]) for r in rows] == [1.0, 10.0, 100.0]
        assert all(float(r["value"]) >= float(r["lower_bound"]) for r in rows)

    def test_audit(self, trained):
        report = commands.cmd_audit(trained)
        assert report.samples <= 4
        assert (trained.run_dir / "audit" / "audit.csv").exists()

    def test_cli_end_to_end(self, trained):
        path = str(trained.run_dir.parent.parent / "tiny.cfg")
        assert main(["evaluate", "--config", path]) == 0
        assert main(["optimize", "--config", path, "--format", "raw"]) == 0
        assert (trained.run_dir / "optimize" / "scene_000" / "result.tensor").exists()


def test_identity_regularizer_keeps_approximation(write_config, tmp_path):
    cfg = load_experiment(write_config(extra="network.final_skip=true\n"))
    ckpt = save_checkpoint(build_network(tiny_unet(final_skip=True), seed=1), tmp_path / "identity.nett")
    result = commands.cmd_optimize(cfg, checkpoint=ckpt, fmt="raw")
    gt = commands.evaluation_scenes(cfg, 1)[0]
    expected = pseudo_inverse_upsample(box_downsample(gt, 4), 4)
    assert np.max(np.abs(result.result - expected)) < 1e-12
    np.testing.assert_array_equal(read_depth(result.out_dir / "result.tensor"), result.result)


def test_optimize_depth_file_input(write_config, tmp_path, rng):
    cfg = load_experiment(write_config())
    save_checkpoint(build_network(tiny_unet(), seed=0), commands.default_checkpoint(cfg))
    write_depth(rng.uniform(size=(37, 45)), tmp_path / "scan.pfm")
    result = commands.cmd_optimize(cfg, source=str(tmp_path / "scan.pfm"))
    assert result.result.shape == (32, 32)
    assert result.out_dir.name == "scan"


# ============================================================
# Матрица экспериментов
# ============================================================

def test_table1_summary_is_reproducible(write_config, tmp_path):
    config_dir = tmp_path / "rows"
    write_config(name="row01", scheme=1, directory=config_dir)
    write_config(name="row02", scheme=2, directory=config_dir,
                 extra="train.augmentations=interpolation\n")
    first = cmd_table1(config_dir, out=tmp_path / "a", workers=1)
    second = cmd_table1(config_dir, out=tmp_path / "b", workers=1)
    assert first.read_bytes() == second.read_bytes()
    with first.open(newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["row01", "row02"]
    assert all(r[-1] == "ok" for r in rows[1:])


def test_table1_resumes_from_manifest(write_config, tmp_path):
    config_dir = tmp_path / "rows"
    write_config(name="row01", directory=config_dir)
    summary = cmd_table1(config_dir, out=tmp_path / "a", workers=1)
    ckpt = tmp_path / "a" / "row01" / "train" / "checkpoint.nett"
    stamp = ckpt.stat().st_mtime_ns
    assert cmd_table1(config_dir, out=tmp_path / "a", workers=1).read_bytes() == summary.read_bytes()
    assert ckpt.stat().st_mtime_ns == stamp


def test_table1_needs_configs(tmp_path):
    with pytest.raises(MissingArtifactError):
        cmd_table1(tmp_path / "empty")


@pytest.mark.slow
def test_noise_augmented_regularizer_improves_scenes(tmp_path):
    cfg = load_experiment(Path(__file__).parent.parent / "configs" / "table1" / "row02.cfg")
    cfg = cfg.with_overrides(output_dir=tmp_path)
    commands.cmd_generate(cfg)
    commands.cmd_train(cfg)
    report = commands.cmd_evaluate(cfg)
    assert len(report.rows) == 10
    assert report.improved_count >= 8
