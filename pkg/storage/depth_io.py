"""
Depth IO — Чтение и запись карт глубины: png16, PFM, raw-tensor.

png16: [0, 65535] ↔ [0, 1] (значения вне диапазона обрезаются, число
обрезаний возвращается и пишется в лог). PFM: вариант Pf (один канал),
float32, строки снизу вверх, масштаб −1.0 (little-endian) при записи;
сужение float64 → float32 пишется в лог.
"""

from __future__ import annotations

import logging
import re
from enum import Enum
from pathlib import Path

import numpy as np
import png

from core.errors import ConfigError, DepthFormatError, MissingArtifactError
from core.sampling import DepthImage
from core.tensor import Array
from storage.raw_tensor import RawTensorError, read_tensor_file, write_tensor_file

logger = logging.getLogger("nett.depth_io")

PNG16_MAX = 65535


class DepthFormat(str, Enum):
    PNG16 = "png16"
    PFM = "pfm"
    RAW = "raw"

    @classmethod
    def from_path(cls, path: str | Path) -> DepthFormat:
        suffix = Path(path).suffix.lower()
        if suffix == ".png":
            return cls.PNG16
        if suffix == ".pfm":
            return cls.PFM
        if suffix in (".tensor", ".raw"):
            return cls.RAW
        raise ConfigError(f"cannot infer depth format from {path!r}; use --format")


def read_depth(path: str | Path, fmt: DepthFormat | str | None = None) -> DepthImage:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"depth file not found: {path}")
    fmt = DepthFormat(fmt) if fmt is not None else DepthFormat.from_path(path)
    if fmt is DepthFormat.PNG16:
        return _read_png(path)
    if fmt is DepthFormat.PFM:
        return _read_pfm(path)
    try:
        _, arr = read_tensor_file(path)
    except RawTensorError as e:
        raise DepthFormatError(f"{path}: {e}", code="malformed_header") from e
    arr = np.squeeze(arr) if arr.ndim > 2 else arr
    if arr.ndim != 2:
        raise DepthFormatError(f"{path}: expected a 2-D depth tensor, got shape {arr.shape}", code="channel_count")
    if not np.all(np.isfinite(arr)):
        raise DepthFormatError(f"{path}: non-finite depth values", code="non_finite")
    return arr


def write_depth(img: DepthImage, path: str | Path, fmt: DepthFormat | str | None = None) -> int:
    """Записать карту глубины; вернуть число обрезанных пикселей (только png16)."""
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DepthFormatError(f"write_depth: expected a 2-D image, got shape {img.shape}", code="channel_count")
    if not np.all(np.isfinite(img)):
        raise DepthFormatError(f"write_depth: non-finite values for {path}", code="non_finite")
    fmt = DepthFormat(fmt) if fmt is not None else DepthFormat.from_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt is DepthFormat.PNG16:
        return _write_png16(img, path)
    if fmt is DepthFormat.PFM:
        _write_pfm(img, path)
    else:
        write_tensor_file(path, "depth", img)
    return 0


# ============================================================
# PNG
# ============================================================

def _read_png(path: Path) -> DepthImage:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).read()
        data = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except png.Error as e:
        raise DepthFormatError(f"{path}: {e}", code="malformed_header") from e
    planes = info.get("planes", 1)
    if planes != 1:
        raise DepthFormatError(f"{path}: expected single channel, got {planes}", code="channel_count")
    return data.reshape(height, width) / float(2 ** info["bitdepth"] - 1)


def _write_png16(img: Array, path: Path) -> int:
    clamped = int(np.count_nonzero((img < 0.0) | (img > 1.0)))
    if clamped:
        logger.warning(f"⚠️ {path.name}: {clamped} пикселей вне [0, 1] обрезано при записи png16")
    q = np.round(np.clip(img, 0.0, 1.0) * PNG16_MAX).astype(np.uint16)
    h, w = q.shape
    with path.open("wb") as f:
        png.Writer(width=w, height=h, greyscale=True, bitdepth=16).write(f, q.tolist())
    return clamped


def write_render_png(image: Array, path: str | Path) -> Path:
    """8-битный полутоновой PNG для рендеров."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = q.shape
    with path.open("wb") as f:
        png.Writer(width=w, height=h, greyscale=True, bitdepth=8).write(f, q.tolist())
    return path


# ============================================================
# PFM
# ============================================================

_TOKEN = re.compile(rb"\S+")


def _read_pfm(path: Path) -> DepthImage:
    buf = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = _TOKEN.search(buf, pos)
        if m is None:
            raise DepthFormatError(f"{path}: malformed PFM header", code="malformed_header")
        tokens.append(m.group())
        pos = m.end()
    # один пробельный символ перед данными, либо \r\n
    pos += 2 if buf[pos:pos + 2] == b"\r\n" else 1
    tag = tokens[0]
    if tag == b"PF":
        raise DepthFormatError(f"{path}: expected single channel (Pf), got 3-channel PF", code="channel_count")
    if tag != b"Pf":
        raise DepthFormatError(f"{path}: not a PFM file (tag {tag!r})", code="malformed_header")
    try:
        width, height, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError as e:
        raise DepthFormatError(f"{path}: malformed PFM header: {e}", code="malformed_header") from e
    if width < 1 or height < 1 or scale == 0.0:
        raise DepthFormatError(f"{path}: malformed PFM header ({width}x{height}, scale {scale})",
                               code="malformed_header")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height
    if len(buf) - pos < 4 * count:
        raise DepthFormatError(f"{path}: PFM data truncated", code="malformed_header")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(height, width)
    if not np.all(np.isfinite(data)):
        raise DepthFormatError(f"{path}: non-finite PFM values", code="non_finite")
    return np.flipud(data).astype(np.float64)


def _write_pfm(img: Array, path: Path) -> int:
    """Записать Pf; float64 сужается до float32. Вернуть число изменённых значений."""
    h, w = img.shape
    narrow = img.astype("<f4")
    changed = int(np.count_nonzero(narrow != img))
    if changed:
        err = float(np.max(np.abs(narrow.astype(np.float64) - img)))
        logger.info(f"ℹ️ {path.name}: {changed} значений округлено до float32 (макс. отклонение {err:.3g})")
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    path.write_bytes(header + np.flipud(narrow).tobytes())
    return changed
