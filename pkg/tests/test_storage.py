import numpy as np
import pytest

from core.resource_monitor import WallClock, take_snapshot
from core.settings import worker_count
from storage.manifest import MANIFEST_FILE, RunManifest, file_sha256
from storage.raw_tensor import RawTensorError, decode_entry, encode_entry, read_tensor_file, write_tensor_file


class TestRawTensor:
    def test_file_round_trip(self, rng, tmp_path):
        arr = rng.normal(size=(2, 3, 4))
        write_tensor_file(tmp_path / "a.tensor", "weights", arr)
        name, back = read_tensor_file(tmp_path / "a.tensor")
        assert name == "weights"
        np.testing.assert_array_equal(back, arr)

    def test_entries_concatenate(self, rng):
        a, b = rng.normal(size=3), rng.normal(size=(2, 2))
        buf = encode_entry("a", a) + encode_entry("b", b)
        name, first, offset = decode_entry(buf)
        name2, second, end = decode_entry(buf, offset)
        assert (name, name2, end) == ("a", "b", len(buf))
        np.testing.assert_array_equal(second, b)

    def test_truncated(self, rng):
        buf = encode_entry("x", rng.normal(size=10))
        with pytest.raises(RawTensorError, match="truncated"):
            decode_entry(buf[:-4])

    def test_trailing_bytes(self, tmp_path):
        (tmp_path / "t.tensor").write_bytes(encode_entry("x", np.zeros(2)) + b"\x00")
        with pytest.raises(RawTensorError, match="trailing"):
            read_tensor_file(tmp_path / "t.tensor")


class TestManifest:
    def test_save_load_verify(self, tmp_path):
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "b.txt").write_text("b")
        (tmp_path / "a.txt").write_text("a")
        manifest = RunManifest(run_name="r", directory=tmp_path)
        manifest.add_file(tmp_path / "a.txt")
        manifest.add_tree("sub")
        manifest.mark_stage("generate")
        loaded = RunManifest.load(tmp_path)
        assert loaded.files == manifest.files
        assert loaded.has_stage("generate")
        assert loaded.verify() == []
        (tmp_path / "a.txt").write_text("changed")
        assert loaded.verify() == ["a.txt"]

    def test_lines_are_sorted(self, tmp_path):
        for name in ("z.txt", "a.txt"):
            (tmp_path / name).write_text(name)
        manifest = RunManifest(run_name="r", directory=tmp_path)
        manifest.add_file(tmp_path / "z.txt")
        manifest.add_file(tmp_path / "a.txt")
        lines = manifest.save().read_text().splitlines()
        assert lines[0] == "run r"
        assert lines[1].startswith("file a.txt ")
        assert lines[2] == f"file z.txt {file_sha256(tmp_path / 'z.txt')}"

    def test_forget_subtree(self, tmp_path):
        (tmp_path / "dataset").mkdir()
        (tmp_path / "dataset" / "x").write_text("x")
        (tmp_path / "keep").write_text("k")
        manifest = RunManifest(run_name="r", directory=tmp_path)
        manifest.add_tree("dataset")
        manifest.add_file(tmp_path / "keep")
        manifest.forget("dataset")
        assert list(manifest.files) == ["keep"]

    def test_open_without_file(self, tmp_path):
        manifest = RunManifest.open(tmp_path, "fresh")
        assert manifest.run_name == "fresh"
        assert not (tmp_path / MANIFEST_FILE).exists()


class TestResources:
    def test_worker_count_from_env(self, monkeypatch):
        monkeypatch.setenv("NETT_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("NETT_THREADS", "zero")
        assert worker_count() == 1

    def test_snapshot_and_clock(self):
        snap = take_snapshot()
        assert snap.process_rss_mb > 0
        assert set(snap.to_dict()) >= {"process_rss_mb", "ram_percent"}
        clock = WallClock()
        assert clock.mark() >= 0.0
        assert clock.peak_rss_mb > 0
