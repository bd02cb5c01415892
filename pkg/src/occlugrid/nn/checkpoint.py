"""Versioned binary checkpoints.

Layout (little-endian): magic ``OCGC``, u32 version, 32-byte config hash,
u32-length-prefixed UTF-8 JSON metadata, then three tensor blocks
(parameters, Adam first moments, Adam second moments). Each block is a u32
count followed by (u16 name length, name, u32 rows, u32 cols, float64 data).
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"OCGC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigHashMismatch(CheckpointError):
    pass


def config_hash(config: dict) -> bytes:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).digest()


def _write_block(fh, arrays):
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        if a.ndim != 2:
            raise CheckpointError(f"{name}: expected a 2-D tensor, got shape {a.shape}")
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<II", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def _read_block(buf, pos):
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = OrderedDict()
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + ln].decode()
        pos += ln
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        nbytes = rows * cols * 8
        if pos + nbytes > len(buf):
            raise CheckpointError("truncated checkpoint")
        out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
        pos += nbytes
    return out, pos


def save_checkpoint(path, params, adam_m, adam_v, meta: dict, chash: bytes):
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION) + chash)
        raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        fh.write(struct.pack("<I", len(raw)) + raw)
        for block in (params, adam_m, adam_v):
            _write_block(fh, block)


def load_checkpoint(path, expect_hash: bytes | None = None):
    """Returns (meta, params, adam_m, adam_v, config_hash)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    chash = buf[8:40]
    if expect_hash is not None and chash != expect_hash:
        raise ConfigHashMismatch(f"{path}: config hash does not match the requested configuration")
    (ln,) = struct.unpack_from("<I", buf, 40)
    meta = json.loads(buf[44:44 + ln].decode())
    pos = 44 + ln
    blocks = []
    for _ in range(3):
        block, pos = _read_block(buf, pos)
        blocks.append(block)
    return meta, blocks[0], blocks[1], blocks[2], chash
