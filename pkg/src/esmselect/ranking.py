"""Produce source rankings from transferability scores and evaluate them
against ground-truth transfer performance with NDCG and regret@k."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scoring, store
from .scoring import Score
from .store import LabelData, SourceManifest, TokenSet

BASELINE_ROW = "__baseline__"


@dataclass(frozen=True)
class RankedItem:
    source_id: str
    score: float


@dataclass
class Ranking:
    """Score-sorted list of source ids for one target and one method.

    Scores are non-increasing; ties are broken by source_id ascending, so the
    ordering is deterministic regardless of scoring order.
    """

    method: str
    target_id: str
    items: list[RankedItem] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    wall_time_ms: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [it.source_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("ranking contains duplicate source ids")
        for a, b in zip(self.items, self.items[1:]):
            if a.score < b.score:
                raise ValueError("ranking scores must be non-increasing")

    def source_ids(self) -> list[str]:
        return [it.source_id for it in self.items]

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "target_id": self.target_id,
            "items": [{"source_id": it.source_id, "score": it.score} for it in self.items],
            "warnings": list(self.warnings),
            "wall_time_ms": dict(self.wall_time_ms),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Ranking":
        items = [RankedItem(str(it["source_id"]), float(it["score"]))
                 for it in doc.get("items", [])]
        return cls(method=str(doc.get("method", "")), target_id=str(doc.get("target_id", "")),
                   items=items, warnings=list(doc.get("warnings", [])),
                   wall_time_ms=dict(doc.get("wall_time_ms", {})))


def save_ranking(ranking: Ranking, path) -> None:
    with store.atomic_write(path) as f:
        f.write(json.dumps(ranking.to_json_dict(), indent=2).encode("utf-8"))


def load_ranking(path) -> Ranking:
    with open(path, "r", encoding="utf-8") as f:
        return Ranking.from_json_dict(json.load(f))


@dataclass
class GroundTruth:
    """Realized transfer performance per source for one target task."""

    target_id: str
    perf: dict[str, float]
    baseline_perf: float | None = None

    def __post_init__(self):
        if not self.perf:
            raise ValueError("ground truth needs at least one source")
        for sid, value in self.perf.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite performance for source {sid!r}")


def load_ground_truth(path, target_id: str | None = None) -> GroundTruth:
    """CSV with header source_id,performance; an optional __baseline__ row
    carries the no-transfer performance. The target id defaults to the file
    stem."""
    path = Path(path)
    perf: dict[str, float] = {}
    baseline = None
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["source_id", "performance"]:
            raise ValueError(f"{path}: expected header 'source_id,performance'")
        for row in reader:
            if not row:
                continue
            sid, value = row[0].strip(), float(row[1])
            if sid == BASELINE_ROW:
                baseline = value
            else:
                perf[sid] = value
    return GroundTruth(target_id=target_id or path.stem, perf=perf, baseline_perf=baseline)


def save_ground_truth(gt: GroundTruth, path) -> None:
    with store.atomic_write(path) as f:
        lines = ["source_id,performance"]
        if gt.baseline_perf is not None:
            lines.append(f"{BASELINE_ROW},{gt.baseline_perf!r}")
        lines.extend(f"{sid},{value!r}" for sid, value in gt.perf.items())
        f.write(("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# ranking construction

def sort_items(items: list[RankedItem]) -> list[RankedItem]:
    """Score descending, ties by source_id ascending."""
    return sorted(items, key=lambda it: (-it.score, it.source_id))


def _score_one(entry: store.SourceEntry, method: str, target_embeddings,
               labels: LabelData, target_repr, target_tokens) -> Score:
    if method == "esm_logme":
        esm = store.read_esm(entry.esm_path)
        return scoring.esm_logme(target_embeddings, labels, esm)
    if method == "leep":
        return scoring.leep(store.read_pseudo(entry.pseudo_label_path), labels)
    if method == "nce":
        return scoring.nce(store.read_pseudo(entry.pseudo_label_path), labels)
    if method == "vocab":
        return scoring.vocab_overlap(store.read_tokenset(entry.token_set_path), target_tokens)
    if method == "textemb":
        source_repr = store.read_matrix(entry.text_emb_path)
        return scoring.textemb_score(source_repr.data[0], target_repr)
    raise ValueError(f"unknown ranking method {method!r}")


_NEEDED_PATH = {
    "esm_logme": "esm_path",
    "leep": "pseudo_label_path",
    "nce": "pseudo_label_path",
    "vocab": "token_set_path",
    "textemb": "text_emb_path",
}


def rank_sources(target_embeddings, labels: LabelData, manifest: SourceManifest,
                 method: str, *, target_tokens: TokenSet | None = None,
                 target_id: str = "", threads: int = 1) -> Ranking:
    """Score every usable manifest entry with one method and sort.

    Sources missing the representation the method needs are skipped and listed
    in the ranking's warnings. Scoring may fan out across threads; the merge is
    deterministic (collected by source_id, then sorted).
    """
    if method == "logme":
        raise ValueError(
            "plain logme needs per-source model embeddings of the target, which a "
            "manifest cannot carry; use esm_logme, or call scoring.logme directly"
        )
    if method not in _NEEDED_PATH:
        raise ValueError(f"unknown ranking method {method!r}")
    if method in ("leep", "nce") and labels.kind != "classification":
        raise ValueError("method undefined for regression")
    if method == "vocab" and target_tokens is None:
        raise ValueError("vocab ranking needs the target's token set")
    if method != "vocab" and target_embeddings is not None:
        store.pair_check(target_embeddings, labels)

    target_repr = None
    if method == "textemb":
        target_repr = scoring.mean_pool(target_embeddings)

    needed = _NEEDED_PATH[method]
    usable, warnings_list = [], []
    for entry in manifest.entries:
        if getattr(entry, needed) is None:
            warnings_list.append(f"source {entry.source_id} skipped: no {needed}")
        else:
            usable.append(entry)
    if not usable:
        raise ValueError(f"no manifest entry carries the representation for {method}")

    t_total = time.perf_counter()
    per_source_ms: dict[str, float] = {}

    def job(entry: store.SourceEntry) -> tuple[str, float, float]:
        t0 = time.perf_counter()
        score = _score_one(entry, method, target_embeddings, labels, target_repr,
                           target_tokens)
        return entry.source_id, score.value, (time.perf_counter() - t0) * 1e3

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, usable))
    else:
        results = [job(entry) for entry in usable]

    items = []
    for source_id, value, ms in results:
        per_source_ms[source_id] = ms
        items.append(RankedItem(source_id=source_id, score=value))
    items = sort_items(items)
    total_ms = (time.perf_counter() - t_total) * 1e3
    return Ranking(method=method, target_id=target_id, items=items,
                   warnings=warnings_list,
                   wall_time_ms={"total": total_ms, "per_source": per_source_ms})


# ---------------------------------------------------------------------------
# evaluation

def _relevances(ranking: Ranking, gt: GroundTruth) -> np.ndarray:
    missing = [sid for sid in ranking.source_ids() if sid not in gt.perf]
    if missing:
        raise ValueError(f"missing ground truth for ranked sources: {missing[:5]}")
    return np.array([gt.perf[sid] for sid in ranking.source_ids()], dtype=np.float64)


def ndcg(ranking: Ranking, gt: GroundTruth) -> float:
    """Normalized discounted cumulative gain over the full ranking, in
    percentage points. Relevance is raw performance, shifted by -min when any
    value is negative so the ideal DCG stays positive."""
    rel = _relevances(ranking, gt)
    if rel.min() == rel.max():
        return 100.0  # any order is ideal
    if rel.min() < 0:
        rel = rel - rel.min()
    discounts = 1.0 / np.log2(np.arange(2, rel.size + 2))
    dcg = float(np.sum(rel * discounts))
    ideal = float(np.sum(np.ascontiguousarray(np.sort(rel)[::-1]) * discounts))
    return 100.0 * dcg / ideal


def regret_at_k(ranking: Ranking, gt: GroundTruth, k: int) -> float:
    """Percentage shortfall of the best top-k pick against the best source in
    the entire pool: 100 * (p* - p_k) / p*."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranking.items:
        raise ValueError("ranking is empty")
    _relevances(ranking, gt)  # validates coverage
    p_star = max(gt.perf.values())
    if p_star <= 0:
        raise ValueError("regret undefined for non-positive best performance")
    if k >= len(gt.perf):
        return 0.0  # the whole pool is selected
    top = ranking.source_ids()[:k]
    p_k = max(gt.perf[sid] for sid in top)
    return 100.0 * (p_star - p_k) / p_star


@dataclass
class EvalRow:
    target_id: str
    ndcg: float
    regret: dict[int, float]


@dataclass
class EvalReport:
    """Per-target ranking quality plus the arithmetic mean row, all in
    percentage points. Values are kept unrounded; rounding happens at
    display time."""

    rows: list[EvalRow]
    ks: list[int]
    average: EvalRow | None = None

    def to_json_dict(self) -> dict:
        def row_dict(row: EvalRow) -> dict:
            doc = {"target_id": row.target_id, "ndcg": row.ndcg}
            for k in self.ks:
                doc[f"regret@{k}"] = row.regret[k]
            return doc

        return {"ks": self.ks,
                "targets": [row_dict(r) for r in self.rows],
                "average": row_dict(self.average)}

    def table(self) -> str:
        headers = ["target", "NDCG"] + [f"R@{k}" for k in self.ks]
        lines = ["\t".join(headers)]
        for row in self.rows + [self.average]:
            cells = [row.target_id, f"{row.ndcg:.2f}"]
            cells += [f"{row.regret[k]:.2f}" for k in self.ks]
            lines.append("\t".join(cells))
        return "\n".join(lines)


def evaluate_ranking(ranking: Ranking, gt: GroundTruth, ks: list[int]) -> EvalRow:
    return EvalRow(target_id=ranking.target_id or gt.target_id,
                   ndcg=ndcg(ranking, gt),
                   regret={k: regret_at_k(ranking, gt, k) for k in ks})


def aggregate_report(rows: list[EvalRow], ks: list[int] | None = None) -> EvalReport:
    """Arithmetic mean per column across targets."""
    if not rows:
        raise ValueError("no evaluation rows to aggregate")
    if ks is None:
        ks = sorted(rows[0].regret)
    avg = EvalRow(
        target_id="avg",
        ndcg=float(np.mean([r.ndcg for r in rows])),
        regret={k: float(np.mean([r.regret[k] for r in rows])) for k in ks},
    )
    return EvalReport(rows=rows, ks=list(ks), average=avg)


def save_report(report: EvalReport, path) -> None:
    with store.atomic_write(path) as f:
        f.write(json.dumps(report.to_json_dict(), indent=2).encode("utf-8"))
