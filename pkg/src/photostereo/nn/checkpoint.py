"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"PSNET\\x00\\x00\\x01"
    version    u32      1
    config     6 x u32  blocks, base_features, patch_size, map_size, kernel, inner_relu
    count      u32      number of tensors
    per tensor:
      name_len u16, name (utf-8), ndim u8, shape ndim x u32,
      data     prod(shape) x f32 (row-major)

Tensors are written in sorted name order so equal parameters give equal bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import Network, NetworkConfig

MAGIC = b"PSNET\x00\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(net: Network) -> bytes:
    cfg = net.config
    out = [MAGIC, struct.pack("<I", VERSION),
           struct.pack("<6I", cfg.blocks, cfg.base_features, cfg.patch_size, cfg.map_size,
                       cfg.kernel, int(cfg.inner_relu)),
           struct.pack("<I", len(net.params))]
    for name in sorted(net.params):
        arr = np.ascontiguousarray(net.params[name], dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(data: bytes, dtype=np.float32) -> Network:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise CheckpointError("not a network checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    blocks, feats, patch, size, kernel, inner = struct.unpack("<6I", take(24))
    try:
        cfg = NetworkConfig(blocks, feats, patch, size, kernel, bool(inner))
    except ValueError as exc:
        raise CheckpointError(f"invalid config header: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = bytes(take(n)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size_ = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(take(4 * size_), dtype="<f4").reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after the last tensor")
    try:
        return Network(cfg, dtype=dtype, params=params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def save(net: Network, path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path, dtype=np.float32) -> Network:
    return loads(Path(path).read_bytes(), dtype=dtype)
