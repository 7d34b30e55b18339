import numpy as np
import png
import pytest

from core.errors import ConfigError, DepthFormatError, MissingArtifactError
from storage.depth_io import DepthFormat, read_depth, write_depth, write_render_png


def test_pfm_round_trip_is_bit_exact(rng, tmp_path):
    img = rng.uniform(size=(7, 5)).astype(np.float32).astype(np.float64)
    write_depth(img, tmp_path / "d.pfm")
    np.testing.assert_array_equal(read_depth(tmp_path / "d.pfm"), img)


def test_pfm_header_and_row_order(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    write_depth(img, tmp_path / "d.pfm")
    buf = (tmp_path / "d.pfm").read_bytes()
    assert buf.startswith(b"Pf\n2 3\n-1.0\n")
    first_stored = np.frombuffer(buf[len(b"Pf\n2 3\n-1.0\n"):], dtype="<f4")[:2]
    np.testing.assert_array_equal(first_stored, [5.0, 6.0])


def test_pfm_float32_narrowing_is_logged(tmp_path, caplog):
    img = np.array([[0.1, 0.5]])
    with caplog.at_level("INFO", logger="nett.depth_io"):
        write_depth(img, tmp_path / "d.pfm")
    assert "1 значений округлено до float32" in caplog.text
    np.testing.assert_array_equal(read_depth(tmp_path / "d.pfm"), img.astype(np.float32).astype(np.float64))


def test_pfm_crlf_header(tmp_path):
    path = tmp_path / "w.pfm"
    path.write_bytes(b"Pf\r\n2 1\r\n-1.0\r\n" + np.array([0.25, 0.75], dtype="<f4").tobytes())
    np.testing.assert_array_equal(read_depth(path), [[0.25, 0.75]])


def test_png16_round_trip(rng, tmp_path):
    img = rng.uniform(size=(6, 9))
    assert write_depth(img, tmp_path / "d.png") == 0
    np.testing.assert_allclose(read_depth(tmp_path / "d.png"), img, atol=1.0 / 65535)


def test_png16_half_quantization(tmp_path):
    write_depth(np.full((2, 2), 0.5), tmp_path / "h.png")
    _, _, rows, _ = png.Reader(filename=str(tmp_path / "h.png")).read()
    values = np.vstack([np.asarray(r) for r in rows])
    assert np.all(np.abs(values.astype(int) - 32768) <= 1)


def test_png16_clamp_count(tmp_path):
    img = np.full((3, 3), 0.2)
    img[1, 1] = 1.5
    assert write_depth(img, tmp_path / "c.png") == 1
    assert read_depth(tmp_path / "c.png")[1, 1] == 1.0


def test_writes_are_byte_identical(rng, tmp_path):
    img = rng.uniform(size=(4, 4))
    for fmt in DepthFormat:
        write_depth(img, tmp_path / f"a.{fmt.value}", fmt)
        write_depth(img, tmp_path / f"b.{fmt.value}", fmt)
        assert (tmp_path / f"a.{fmt.value}").read_bytes() == (tmp_path / f"b.{fmt.value}").read_bytes()


def test_raw_round_trip(rng, tmp_path):
    img = rng.normal(size=(5, 3))
    write_depth(img, tmp_path / "d.tensor")
    np.testing.assert_array_equal(read_depth(tmp_path / "d.tensor"), img)


def test_color_png_rejected(tmp_path):
    path = tmp_path / "rgb.png"
    with path.open("wb") as f:
        png.Writer(width=2, height=2, greyscale=False, bitdepth=16).write(f, [[0] * 6, [1000] * 6])
    with pytest.raises(DepthFormatError) as err:
        read_depth(path)
    assert err.value.code == "channel_count"


def test_three_channel_pfm_rejected(tmp_path):
    path = tmp_path / "c.pfm"
    path.write_bytes(b"PF\n1 1\n-1.0\n" + np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(DepthFormatError) as err:
        read_depth(path)
    assert err.value.code == "channel_count"


def test_non_finite_pfm_rejected(tmp_path):
    path = tmp_path / "n.pfm"
    path.write_bytes(b"Pf\n2 1\n-1.0\n" + np.array([0.5, np.nan], dtype="<f4").tobytes())
    with pytest.raises(DepthFormatError) as err:
        read_depth(path)
    assert err.value.code == "non_finite"


def test_truncated_pfm_rejected(tmp_path):
    path = tmp_path / "t.pfm"
    path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 8)
    with pytest.raises(DepthFormatError, match="truncated"):
        read_depth(path)


def test_missing_and_unknown(tmp_path):
    with pytest.raises(MissingArtifactError):
        read_depth(tmp_path / "none.pfm")
    with pytest.raises(ConfigError):
        DepthFormat.from_path("depth.jpg")


def test_non_finite_write_rejected(tmp_path):
    with pytest.raises(DepthFormatError):
        write_depth(np.array([[np.inf, 0.0]]), tmp_path / "x.pfm")


def test_render_png(rng, tmp_path):
    path = write_render_png(rng.uniform(size=(4, 6)), tmp_path / "r" / "render.png")
    width, height, _, info = png.Reader(filename=str(path)).read()
    assert (width, height, info["bitdepth"]) == (6, 4, 8)
