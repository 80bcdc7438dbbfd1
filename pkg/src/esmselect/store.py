"""Binary formats and loaders for embeddings, labels, pseudo-labels, token sets,
linear maps, and source-pool manifests.

All files share the same skeleton, little-endian throughout:

    magic (4 bytes) | version u32 | kind u8 | 3 reserved bytes | dim0 u64 | dim1 u64
    payload (format-specific)
    meta_len u32 | UTF-8 JSON metadata

The linear-map format ("ESMW") is the one exception: its header is
magic | version u32 | d_in u64 | d_out u64, with no kind byte.

Loaded objects are immutable and safe to share across threads. Writers assume
exclusive access to their output path and never leave partial files behind
(write to a temp file in the same directory, then rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .esm import Esm

MAGIC_EMBEDDINGS = b"ESEB"
MAGIC_LABELS = b"ESLB"
MAGIC_PSEUDO = b"ESPL"
MAGIC_TOKENSET = b"ESTS"
MAGIC_ESM = b"ESMW"

FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIB3xQQ")   # magic, version, kind byte, dims
_ESM_HEADER = struct.Struct("<4sIQQ")  # magic, version, d_in, d_out
_META_LEN = struct.Struct("<I")

ROW_SUM_TOL = 1e-5

_KIND_F32 = 0
_KIND_CLASSIFICATION = 0
_KIND_REGRESSION = 1
_KIND_U32 = 1


class FormatError(ValueError):
    """A file does not conform to one of the binary formats."""


def _check_finite(data: np.ndarray, what: str) -> None:
    # cheap pass first: a finite sum proves all entries finite; a non-finite
    # sum can also be plain overflow, so only then pay for the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(data.sum()):
            return
    finite = np.isfinite(data)
    if not finite.all():
        i, j = np.argwhere(~finite)[0]
        raise ValueError(f"{what}: non-finite value at ({i}, {j})")


def _as_f32_matrix(data, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"{what}: expected a 2-D array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{what}: empty dimension in shape {arr.shape}")
    _check_finite(arr, what)
    return arr


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n×d float32 matrix of example embeddings produced by one model."""

    data: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32_matrix(self.data, "embeddings"))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelData:
    """Class ids or a regression target matrix for one task."""

    kind: str  # "classification" | "regression"
    classes: np.ndarray | None = None
    num_classes: int = 0
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "classification":
            ids = np.ascontiguousarray(self.classes, dtype=np.int64)
            if ids.ndim != 1 or ids.size < 1:
                raise ValueError("classification labels must be a non-empty 1-D array")
            k = int(self.num_classes) if self.num_classes else int(ids.max()) + 1
            if k < 2:
                raise ValueError("classification needs at least 2 classes")
            if ids.min() < 0 or ids.max() >= k:
                raise ValueError(f"class ids must lie in 0..{k - 1}")
            object.__setattr__(self, "classes", ids)
            object.__setattr__(self, "num_classes", k)
        elif self.kind == "regression":
            vals = _as_f32_matrix(self.values, "regression targets")
            object.__setattr__(self, "values", vals)
        else:
            raise ValueError(f"unknown label kind {self.kind!r}")

    @classmethod
    def classification(cls, ids, num_classes: int = 0) -> "LabelData":
        return cls(kind="classification", classes=ids, num_classes=num_classes)

    @classmethod
    def regression(cls, values) -> "LabelData":
        values = np.asarray(values, dtype=np.float32)
        if values.ndim == 1:
            values = values[:, None]
        return cls(kind="regression", values=values)

    @property
    def n(self) -> int:
        if self.kind == "classification":
            return self.classes.shape[0]
        return self.values.shape[0]


@dataclass(frozen=True)
class PseudoLabelMatrix:
    """Row-stochastic n×Z float32 matrix of a source model's predicted label
    distributions. Rows must sum to 1 within ROW_SUM_TOL."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_f32_matrix(self.probs, "pseudo-labels")
        if probs.shape[1] < 2:
            raise ValueError("pseudo-labels need a source label space of size >= 2")
        if probs.min() < 0:
            raise ValueError("pseudo-label probabilities must be nonnegative")
        sums = probs.astype(np.float64).sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(
                f"pseudo-label row {i} sums to {sums[i]:.8f}, outside 1±{ROW_SUM_TOL}"
            )
        object.__setattr__(self, "probs", probs)

    @classmethod
    def normalized(cls, probs) -> "PseudoLabelMatrix":
        """Build from raw probabilities, renormalizing rows that are within
        ROW_SUM_TOL of 1 (rows further out are rejected)."""
        arr = _as_f32_matrix(probs, "pseudo-labels")
        sums = arr.astype(np.float64).sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(
                f"pseudo-label row {i} sums to {sums[i]:.8f}, outside 1±{ROW_SUM_TOL}"
            )
        arr = (arr.astype(np.float64) / sums[:, None]).astype(np.float32)
        return cls(probs=arr)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def z(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class TokenSet:
    """Strictly ascending unique uint32 token ids from one tokenizer."""

    ids: np.ndarray
    tokenizer_id: str = ""

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.uint32)
        if ids.ndim != 1:
            raise ValueError("token ids must be 1-D")
        if ids.size > 1 and not (np.diff(ids.astype(np.int64)) > 0).all():
            raise ValueError("token ids must be strictly ascending and unique")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_ids(cls, ids, tokenizer_id: str = "") -> "TokenSet":
        return cls(ids=np.unique(np.asarray(ids, dtype=np.uint32)), tokenizer_id=tokenizer_id)

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass
class SourceEntry:
    source_id: str
    esm_path: Path | None = None
    pseudo_label_path: Path | None = None
    token_set_path: Path | None = None
    text_emb_path: Path | None = None


@dataclass
class SourceManifest:
    """Pool of candidate sources and the per-source representation files."""

    entries: list[SourceEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.source_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate source ids in manifest: {dupes}")


# ---------------------------------------------------------------------------
# low-level helpers

@contextmanager
def atomic_write(path):
    """Write to a temp file in the target directory, rename on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _read_exact(f, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise FormatError(f"short read: expected {size} bytes of {what}, got {len(buf)}")
    return buf


def _read_header(f, magic: bytes, path) -> tuple[int, int, int]:
    raw = _read_exact(f, _HEADER.size, "header")
    got, version, kind, dim0, dim1 = _HEADER.unpack(raw)
    if got != magic:
        raise FormatError(f"unrecognized format in {path}: magic {got!r}, expected {magic!r}")
    if version > FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} in {path} (max {FORMAT_VERSION})")
    return kind, dim0, dim1


def _check_payload_fits(f, nbytes: int, path) -> None:
    # Corrupt headers must fail before any payload-sized allocation.
    pos = f.tell()
    end = f.seek(0, os.SEEK_END)
    f.seek(pos)
    if end - pos < nbytes:
        raise FormatError(
            f"short read: {path} declares {nbytes} payload bytes, file has {end - pos}"
        )


def _read_payload(f, dtype, count: int, path) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    _check_payload_fits(f, count * itemsize, path)
    data = np.frombuffer(_read_exact(f, count * itemsize, "payload"), dtype=dtype)
    return data.copy()


def _write_meta(f, meta: dict) -> None:
    blob = json.dumps(meta, separators=(",", ":"), sort_keys=True).encode("utf-8")
    f.write(_META_LEN.pack(len(blob)))
    f.write(blob)


def _read_meta(f, path) -> dict:
    raw = _read_exact(f, _META_LEN.size, "metadata length")
    (length,) = _META_LEN.unpack(raw)
    _check_payload_fits(f, length, path)
    if length == 0:
        return {}
    return json.loads(_read_exact(f, length, "metadata").decode("utf-8"))


# ---------------------------------------------------------------------------
# embeddings ("ESEB")

def write_matrix(m: EmbeddingMatrix, path) -> None:
    _check_finite(m.data, "embeddings")  # arrays are mutable; reject before writing
    with atomic_write(path) as f:
        f.write(_HEADER.pack(MAGIC_EMBEDDINGS, FORMAT_VERSION, _KIND_F32, m.n, m.d))
        f.write(m.data.astype("<f4", copy=False).tobytes())
        _write_meta(f, {"model_id": m.model_id})


def read_matrix(path) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        kind, n, d = _read_header(f, MAGIC_EMBEDDINGS, path)
        if kind != _KIND_F32:
            raise FormatError(f"unsupported dtype byte {kind} in {path}")
        if n < 1 or d < 1:
            raise FormatError(f"invalid dimensions {n}×{d} in {path}")
        data = _read_payload(f, "<f4", n * d, path).reshape(n, d)
        meta = _read_meta(f, path)
    return EmbeddingMatrix(data=data, model_id=str(meta.get("model_id", "")))


# ---------------------------------------------------------------------------
# labels ("ESLB")

def write_labels(labels: LabelData, path) -> None:
    with atomic_write(path) as f:
        if labels.kind == "classification":
            f.write(_HEADER.pack(MAGIC_LABELS, FORMAT_VERSION, _KIND_CLASSIFICATION,
                                 labels.n, labels.num_classes))
            f.write(labels.classes.astype("<u4", copy=False).tobytes())
        else:
            n, m = labels.values.shape
            f.write(_HEADER.pack(MAGIC_LABELS, FORMAT_VERSION, _KIND_REGRESSION, n, m))
            f.write(labels.values.astype("<f4", copy=False).tobytes())
        _write_meta(f, {})


def read_labels(path) -> LabelData:
    with open(path, "rb") as f:
        kind, dim0, dim1 = _read_header(f, MAGIC_LABELS, path)
        if kind == _KIND_CLASSIFICATION:
            ids = _read_payload(f, "<u4", dim0, path).astype(np.int64)
            _read_meta(f, path)
            return LabelData.classification(ids, num_classes=dim1)
        if kind == _KIND_REGRESSION:
            vals = _read_payload(f, "<f4", dim0 * dim1, path).reshape(dim0, dim1)
            _read_meta(f, path)
            return LabelData.regression(vals)
        raise FormatError(f"unknown label kind byte {kind} in {path}")


# ---------------------------------------------------------------------------
# pseudo-labels ("ESPL")

def write_pseudo(p: PseudoLabelMatrix, path) -> None:
    _check_finite(p.probs, "pseudo-labels")
    with atomic_write(path) as f:
        f.write(_HEADER.pack(MAGIC_PSEUDO, FORMAT_VERSION, _KIND_F32, p.n, p.z))
        f.write(p.probs.astype("<f4", copy=False).tobytes())
        _write_meta(f, {})


def read_pseudo(path) -> PseudoLabelMatrix:
    with open(path, "rb") as f:
        kind, n, z = _read_header(f, MAGIC_PSEUDO, path)
        if kind != _KIND_F32:
            raise FormatError(f"unsupported dtype byte {kind} in {path}")
        probs = _read_payload(f, "<f4", n * z, path).reshape(n, z)
        _read_meta(f, path)
    return PseudoLabelMatrix(probs=probs)


# ---------------------------------------------------------------------------
# token sets ("ESTS")

def write_tokenset(t: TokenSet, path) -> None:
    with atomic_write(path) as f:
        f.write(_HEADER.pack(MAGIC_TOKENSET, FORMAT_VERSION, _KIND_U32, len(t), 0))
        f.write(t.ids.astype("<u4", copy=False).tobytes())
        _write_meta(f, {"tokenizer_id": t.tokenizer_id})


def read_tokenset(path) -> TokenSet:
    with open(path, "rb") as f:
        kind, count, _ = _read_header(f, MAGIC_TOKENSET, path)
        if kind != _KIND_U32:
            raise FormatError(f"unsupported dtype byte {kind} in {path}")
        ids = _read_payload(f, "<u4", count, path)
        meta = _read_meta(f, path)
    return TokenSet(ids=ids, tokenizer_id=str(meta.get("tokenizer_id", "")))


# ---------------------------------------------------------------------------
# linear maps ("ESMW")

def write_esm(esm: Esm, path) -> None:
    with atomic_write(path) as f:
        f.write(_ESM_HEADER.pack(MAGIC_ESM, FORMAT_VERSION, esm.d_in, esm.d_out))
        f.write(esm.weight.astype("<f4", copy=False).tobytes())
        f.write(esm.bias.astype("<f4", copy=False).tobytes())
        _write_meta(f, esm.meta)


def read_esm(path) -> Esm:
    with open(path, "rb") as f:
        raw = _read_exact(f, _ESM_HEADER.size, "header")
        magic, version, d_in, d_out = _ESM_HEADER.unpack(raw)
        if magic != MAGIC_ESM:
            raise FormatError(f"unrecognized format in {path}: magic {magic!r}")
        if version > FORMAT_VERSION:
            raise FormatError(f"unsupported version {version} in {path}")
        if d_in < 1 or d_out < 1:
            raise FormatError(f"invalid dimensions {d_in}→{d_out} in {path}")
        weight = _read_payload(f, "<f4", d_out * d_in, path).reshape(d_out, d_in)
        bias = _read_payload(f, "<f4", d_out, path)
        meta = _read_meta(f, path)
    return Esm(weight=weight, bias=bias, meta=meta)


# ---------------------------------------------------------------------------
# manifests (JSON)

_ENTRY_PATHS = ("esm_path", "pseudo_label_path", "token_set_path", "text_emb_path")


def load_manifest(path) -> SourceManifest:
    """Load a manifest; relative paths resolve against the manifest's directory.
    Every referenced file must exist."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    base = path.parent
    entries = []
    for raw in doc.get("entries", []):
        entry = SourceEntry(source_id=str(raw["source_id"]))
        for key in _ENTRY_PATHS:
            value = raw.get(key)
            if value is None:
                continue
            p = Path(value)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise ValueError(f"manifest {path}: {key} {p} does not exist")
            setattr(entry, key, p)
        entries.append(entry)
    return SourceManifest(entries=entries)


def save_manifest(manifest: SourceManifest, path) -> None:
    doc = {"entries": []}
    for e in manifest.entries:
        raw = {"source_id": e.source_id}
        for key in _ENTRY_PATHS:
            value = getattr(e, key)
            if value is not None:
                raw[key] = str(value)
        doc["entries"].append(raw)
    with atomic_write(path) as f:
        f.write(json.dumps(doc, indent=2).encode("utf-8"))


def pair_check(embeddings: EmbeddingMatrix, labels: LabelData) -> None:
    if embeddings.n != labels.n:
        raise ValueError(
            f"row count mismatch: {embeddings.n} embeddings vs {labels.n} labels"
        )


def warn_if_tokenizers_differ(a: TokenSet, b: TokenSet) -> None:
    if a.tokenizer_id and b.tokenizer_id and a.tokenizer_id != b.tokenizer_id:
        warnings.warn(
            f"comparing token sets from different tokenizers "
            f"({a.tokenizer_id!r} vs {b.tokenizer_id!r})",
            stacklevel=3,
        )
