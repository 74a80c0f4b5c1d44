"""SXGM binary matrix container, CSV reader and instance export.

SXGM layout (little-endian): ``b"SXGM"``, version ``u32``, ``n`` ``u64``,
``d`` ``u64``, then ``n*d`` row-major float64 values.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import ContractError, DesignMatrix

MAGIC = b"SXGM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ContractError):
    pass


def save_sxgm(path, a) -> None:
    a = np.asarray(a.data if isinstance(a, DesignMatrix) else a, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise FormatError("SXGM stores 2-D arrays only")
    n, d = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d))
        fh.write(np.ascontiguousarray(a).tobytes())


def load_sxgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, n, d = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        body = fh.read()
    if len(body) != 8 * n * d:
        raise FormatError(f"{path}: expected {8 * n * d} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def load_csv(path) -> np.ndarray:
    a = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return a


def load_matrix(path) -> np.ndarray:
    """Load an SXGM file, or a CSV when the suffix is ``.csv``."""
    if str(path).lower().endswith(".csv"):
        return load_csv(path)
    return load_sxgm(path)


def load_vector(path) -> np.ndarray:
    a = load_matrix(path)
    if 1 not in a.shape:
        raise FormatError(f"{path}: expected a vector, got shape {a.shape}")
    return a.ravel()


def export_instance(problem, stem) -> dict:
    """Write ``<stem>.sxgm`` (X), ``<stem>.y.sxgm`` (y) and ``<stem>.json`` (metadata)."""
    stem = Path(stem)
    paths = {"X": stem.with_suffix(".sxgm"), "y": stem.with_suffix(".y.sxgm"),
             "meta": stem.with_suffix(".json")}
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_sxgm(paths["X"], problem.X)
    save_sxgm(paths["y"], problem.y)
    meta = problem.metadata()
    meta["instance_hash"] = problem.instance_hash
    meta["files"] = {"X": paths["X"].name, "y": paths["y"].name}
    paths["meta"].write_text(json.dumps(meta, indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
