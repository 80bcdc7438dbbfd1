"""Writers for the selection toolkit's binary wire formats.

This package talks to the scoring side only through files, so the formats are
implemented here independently; the layouts must stay bit-compatible:

    magic (4) | version u32 | kind u8 | 3 reserved | dim0 u64 | dim1 u64
    payload
    meta_len u32 | UTF-8 JSON

little-endian throughout. Embeddings ("ESEB") carry float32 rows, labels
("ESLB") uint32 class ids or float32 targets, pseudo-labels ("ESPL") float32
row-stochastic matrices, token sets ("ESTS") ascending uint32 ids.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

_HEADER = struct.Struct("<4sIB3xQQ")
_META_LEN = struct.Struct("<I")
VERSION = 1


def _meta_blob(meta: dict) -> bytes:
    blob = json.dumps(meta, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return _META_LEN.pack(len(blob)) + blob


def _write_atomic(path, chunks) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_embeddings(data: np.ndarray, path, meta: dict) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"embeddings must be a non-empty 2-D array, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("embeddings contain non-finite values")
    n, d = arr.shape
    _write_atomic(path, [_HEADER.pack(b"ESEB", VERSION, 0, n, d),
                         arr.tobytes(), _meta_blob(meta)])


def write_pseudo_labels(probs: np.ndarray, path, meta: dict | None = None) -> None:
    arr = np.ascontiguousarray(probs, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError(f"pseudo-labels must be n×Z with Z >= 2, got {arr.shape}")
    sums = arr.astype(np.float64).sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-5:
        raise ValueError("pseudo-label rows must sum to 1 within 1e-5")
    n, z = arr.shape
    _write_atomic(path, [_HEADER.pack(b"ESPL", VERSION, 0, n, z),
                         arr.tobytes(), _meta_blob(meta or {})])


def write_token_set(ids, path, tokenizer_id: str) -> None:
    arr = np.unique(np.asarray(ids, dtype="<u4"))
    _write_atomic(path, [_HEADER.pack(b"ESTS", VERSION, 1, arr.size, 0),
                         arr.tobytes(), _meta_blob({"tokenizer_id": tokenizer_id})])


def write_class_labels(ids, num_classes: int, path) -> None:
    arr = np.ascontiguousarray(ids, dtype="<u4")
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("class labels must be a non-empty 1-D array")
    if num_classes < 2 or int(arr.max()) >= num_classes:
        raise ValueError(f"class ids must lie in 0..{num_classes - 1}")
    _write_atomic(path, [_HEADER.pack(b"ESLB", VERSION, 0, arr.size, num_classes),
                         arr.tobytes(), _meta_blob({})])


def write_regression_labels(values: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError("regression labels must be n×m with n >= 1")
    if not np.isfinite(arr).all():
        raise ValueError("regression labels contain non-finite values")
    n, m = arr.shape
    _write_atomic(path, [_HEADER.pack(b"ESLB", VERSION, 1, n, m),
                         arr.tobytes(), _meta_blob({})])
