"""Extraction jobs: what to run on which rows of which dataset."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POOLING_MODES = ("cls", "mean")


@dataclass
class ExtractionJob:
    """One model x dataset extraction.

    input_columns holds one or two column names; two-input tasks are encoded
    as a single paired sequence by the tokenizer. Rows beyond max_rows are
    dropped after a seeded shuffle so subsamples are reproducible; the seed
    lands in the output metadata.
    """

    model: str
    dataset: str
    split: str | None = None
    input_columns: list[str] = field(default_factory=list)
    label_column: str | None = None
    label_kind: str = "classification"  # when label_column is set
    pooling: str = "cls"
    max_rows: int = 10_000
    max_seq_len: int = 128
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if not self.input_columns:
            raise ValueError("at least one input column is required")
        if len(self.input_columns) > 2:
            raise ValueError("at most two input columns are supported")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.label_kind not in ("classification", "regression"):
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.max_rows < 1:
            raise ValueError("max_rows must be >= 1")
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be >= 8")


def _dataset_file(job: ExtractionJob) -> Path:
    path = Path(job.dataset)
    if path.is_dir():
        if not job.split:
            raise ValueError(f"{path} is a directory; a --split is required")
        for suffix in (".jsonl", ".csv"):
            candidate = path / f"{job.split}{suffix}"
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"no {job.split}.jsonl or {job.split}.csv under {path}")
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    return path


def _read_rows(path: Path) -> list[dict]:
    if path.suffix == ".jsonl":
        rows = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        return rows
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def load_rows(job: ExtractionJob) -> tuple[list[dict], bool]:
    """Read, validate, and subsample the dataset rows.

    Returns (rows, subsampled). Needed columns must exist in every row; an
    empty split is an error.
    """
    rows = _read_rows(_dataset_file(job))
    if not rows:
        raise ValueError(f"dataset split {job.dataset!r} is empty")
    needed = list(job.input_columns)
    if job.label_column:
        needed.append(job.label_column)
    missing = [c for c in needed if c not in rows[0]]
    if missing:
        raise ValueError(f"column(s) {missing} not found; dataset has {sorted(rows[0])}")
    subsampled = len(rows) > job.max_rows
    if subsampled:
        order = np.random.default_rng(job.seed).permutation(len(rows))[:job.max_rows]
        rows = [rows[i] for i in order]
    return rows, subsampled


def texts_of(rows: list[dict], job: ExtractionJob) -> tuple[list[str], list[str] | None]:
    first = [str(r[job.input_columns[0]]) for r in rows]
    if len(job.input_columns) == 2:
        return first, [str(r[job.input_columns[1]]) for r in rows]
    return first, None


def labels_of(rows: list[dict], job: ExtractionJob) -> np.ndarray:
    raw = [r[job.label_column] for r in rows]
    if job.label_kind == "classification":
        return np.array([int(v) for v in raw], dtype=np.int64)
    return np.array([float(v) for v in raw], dtype=np.float32)
