"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    offset  size  field
    0       4     magic b"RMCK"
    4       4     uint32 format version (currently 1)
    8       8     uint64 manifest byte length M
    16      M     manifest: UTF-8 JSON object (config, seed, step, fingerprint, ...)
    16+M    8     uint64 entry count N
    then N entries, each:
            2     uint16 path byte length P
            P     parameter path, UTF-8
            1     uint8 ndim
            8*nd  int64 dims
            4*n   row-major float32 payload (n = product of dims)

Entries are written in sorted path order, so equal state produces equal
bytes.  Optimizer moments are stored as ordinary entries under an
"optim/<param path>/<slot>" prefix.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"RMCK"
VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file failed structural validation."""


def save_checkpoint(path, tensors: dict, manifest: dict) -> None:
    """tensors: parameter path -> tensor/ndarray (stored as float32)."""
    path = Path(path)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            t = tensors[name]
            if isinstance(t, torch.Tensor):
                arr = t.detach().to(torch.float32).contiguous().numpy()
            else:
                arr = np.ascontiguousarray(t, dtype=np.float32)
            enc = name.encode("utf-8")
            if len(enc) > 0xFFFF:
                raise ValueError(f"parameter path too long: {name!r}")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<q", d))
            f.write(arr.astype("<f4").tobytes())


def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated file while reading {what}")
    return data


def load_checkpoint(path):
    """Returns (tensors: dict[str, np.float32 array], manifest: dict)."""
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, 4, path, "magic") != MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<Q", _read_exact(f, 8, path, "manifest length"))
        try:
            manifest = json.loads(_read_exact(f, mlen, path, "manifest").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
        (count,) = struct.unpack("<Q", _read_exact(f, 8, path, "entry count"))
        tensors = {}
        for _ in range(count):
            (plen,) = struct.unpack("<H", _read_exact(f, 2, path, "entry header"))
            name = _read_exact(f, plen, path, "entry path").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, path, f"ndim of {name!r}"))
            dims = struct.unpack(
                f"<{ndim}q", _read_exact(f, 8 * ndim, path, f"dims of {name!r}")
            ) if ndim else ()
            n = int(np.prod(dims)) if ndim else 1
            payload = _read_exact(f, 4 * n, path, f"payload of {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return tensors, manifest
