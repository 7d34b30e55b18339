"""
Checkpoint — Бинарный файл весов сети.

    "NETTCKPT" | u32 версия | u32 число записей | записи raw_tensor | u32 длина | JSON (spec, seed)
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

from core.errors import CheckpointError, MissingArtifactError
from network.regnet import NetworkSpec, WeightStore
from storage.raw_tensor import RawTensorError, decode_entry, encode_entry

logger = logging.getLogger("nett.checkpoint")

MAGIC = b"NETTCKPT"
VERSION = 1


def save_checkpoint(weights: WeightStore, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trailer = json.dumps({"spec": weights.spec.to_dict(), "seed": weights.seed}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights.params))]
    parts += [encode_entry(name, arr) for name, arr in weights.params.items()]
    parts += [struct.pack("<I", len(trailer)), trailer]
    path.write_bytes(b"".join(parts))
    logger.info(f"💾 Чекпоинт сохранён: {path} ({weights.parameter_count} параметров)")
    return path


def load_checkpoint(path: str | Path, spec: NetworkSpec | None = None) -> WeightStore:
    """Прочитать веса; если spec передан, формы сверяются с ним, а не с сохранённым."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if len(buf) < len(MAGIC) + 8 and MAGIC.startswith(buf[:len(MAGIC)]):
        raise CheckpointError(f"corrupt checkpoint {path}: header truncated", code="corrupt")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic in {path}", code="bad_magic")
    version, count = struct.unpack_from("<II", buf, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})",
                              code="version_mismatch")

    offset = len(MAGIC) + 8
    params = {}
    try:
        for _ in range(count):
            name, arr, offset = decode_entry(buf, offset)
            params[name] = arr
        if offset + 4 > len(buf):
            raise RawTensorError("spec block missing")
        (block_len,) = struct.unpack_from("<I", buf, offset)
        block = buf[offset + 4:offset + 4 + block_len]
        if len(block) != block_len:
            raise RawTensorError("spec block truncated")
        meta = json.loads(block.decode("utf-8"))
        stored_spec = NetworkSpec.from_dict(meta["spec"])
    except (RawTensorError, ValueError, KeyError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}", code="corrupt") from e

    expected = spec or stored_spec
    shapes = expected.parameter_shapes()
    for name, shape in shapes.items():
        got = params.get(name)
        if got is None or got.shape != shape:
            layer = name.rsplit(".", 1)[0]
            found = None if got is None else got.shape
            raise CheckpointError(f"shape mismatch at layer {layer!r}: checkpoint has {found}, spec expects {shape}",
                                  code="shape_mismatch")
    return WeightStore(expected, {name: params[name] for name in shapes}, int(meta.get("seed", 0)))
