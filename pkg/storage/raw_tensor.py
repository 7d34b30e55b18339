"""
Raw Tensor — Двоичная запись одного именованного тензора.

Формат записи (little-endian):
    u16 длина имени | имя UTF-8 | u8 dtype (0 = f64) | u8 ndim | ndim × u32 | значения f64

Этот же формат используют записи чекпоинта, файлы датасета и depth_io (raw).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from core.tensor import Array

DTYPE_F64 = 0


class RawTensorError(ValueError):
    """Запись обрезана или некорректна."""


def encode_entry(name: str, array: Array) -> bytes:
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(array, dtype="<f8")
    return b"".join([
        struct.pack("<H", len(name_b)),
        name_b,
        struct.pack("<BB", DTYPE_F64, arr.ndim),
        struct.pack(f"<{arr.ndim}I", *arr.shape),
        arr.tobytes(),
    ])


def _take(buf: bytes, offset: int, size: int) -> tuple[bytes, int]:
    if offset + size > len(buf):
        raise RawTensorError(f"truncated at byte {offset}: need {size}, have {len(buf) - offset}")
    return buf[offset:offset + size], offset + size


def decode_entry(buf: bytes, offset: int = 0) -> tuple[str, Array, int]:
    """Прочитать запись с позиции offset; вернуть (имя, массив, новая позиция)."""
    raw, offset = _take(buf, offset, 2)
    (name_len,) = struct.unpack("<H", raw)
    raw, offset = _take(buf, offset, name_len)
    try:
        name = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise RawTensorError(f"bad entry name: {e}") from e
    raw, offset = _take(buf, offset, 2)
    dtype, ndim = struct.unpack("<BB", raw)
    if dtype != DTYPE_F64:
        raise RawTensorError(f"entry {name!r}: unsupported dtype code {dtype}")
    raw, offset = _take(buf, offset, 4 * ndim)
    shape = struct.unpack(f"<{ndim}I", raw)
    count = int(np.prod(shape, dtype=np.int64))
    raw, offset = _take(buf, offset, 8 * count)
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return name, arr, offset


def write_tensor_file(path: str | Path, name: str, array: Array) -> None:
    Path(path).write_bytes(encode_entry(name, array))


def read_tensor_file(path: str | Path) -> tuple[str, Array]:
    buf = Path(path).read_bytes()
    name, arr, offset = decode_entry(buf)
    if offset != len(buf):
        raise RawTensorError(f"{path}: {len(buf) - offset} trailing bytes after entry")
    return name, arr
