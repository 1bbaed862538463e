"""Binary serialization: tensor blocks, feature matrices, checkpoints.

Tensor block ("SPT1"): magic, u32 rank, u32 dims[rank], float32 payload,
row-major, all little-endian. Checkpoints are a directory holding
manifest.json (configs plus the ordered tensor names) and tensors.bin,
the concatenation of one block per tensor in manifest order.

Feature file ("SFTR"): magic, u32 version = 1, u32 rows, u32 cols,
float32 row-major payload. Flag tracks are stored as rows x 1 of
0.0 / 1.0.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"SPT1"
FEATURE_MAGIC = b"SFTR"
FEATURE_VERSION = 1
_MAX_RANK = 8


class FormatError(ValueError):
    """Malformed or truncated binary payload."""


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated stream: wanted {n} bytes, got {len(buf)}")
    return buf


def write_tensor_block(fh, arr: np.ndarray) -> None:
    # asarray keeps rank 0 intact; tobytes always emits a C-order copy
    arr = np.asarray(arr, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def read_tensor_block(fh) -> np.ndarray:
    magic = _read_exact(fh, 4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    if rank > _MAX_RANK:
        raise FormatError(f"implausible tensor rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, 4 * count)
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def write_feature_file(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2:
        raise FormatError(f"feature files hold 2-d matrices, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"bad feature magic {magic!r}")
        version, rows, cols = struct.unpack("<III", _read_exact(fh, 12))
        if version != FEATURE_VERSION:
            raise FormatError(f"unsupported feature version {version}")
        payload = _read_exact(fh, 4 * rows * cols)
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def save_checkpoint(directory, manifest: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write manifest.json + tensors.bin; `manifest` must be JSON-safe
    and gains a "tensors" key fixing the block order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest["tensors"] = list(tensors.keys())
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / "tensors.bin", "wb") as fh:
        for arr in tensors.values():
            write_tensor_block(fh, arr)


def load_checkpoint(directory) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    names = manifest.get("tensors")
    if not isinstance(names, list):
        raise FormatError("manifest.json lacks a tensor name list")
    tensors: dict[str, np.ndarray] = {}
    with open(directory / "tensors.bin", "rb") as fh:
        for name in names:
            tensors[name] = read_tensor_block(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after the last tensor block")
    return manifest, tensors
