"""Transferability scorers.

logme      log marginal evidence of a Bayesian linear model from features to
           labels, maximized over the prior/noise precisions (alpha, beta)
esm_logme  logme on ESM-transformed base embeddings
leep       log expected empirical prediction from soft pseudo-labels
nce        negative conditional entropy of labels given hard pseudo-labels
textemb    cosine similarity of mean-pooled dataset representations
vocab      Jaccard overlap of token-id sets

All scorers are pure functions over immutable inputs: same inputs give
bit-identical outputs, and they are safe to run in parallel across sources.
Higher values always mean better predicted transfer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .esm import Esm, apply_esm
from .store import (EmbeddingMatrix, LabelData, PseudoLabelMatrix, TokenSet,
                    pair_check, warn_if_tokenizers_differ)

METHODS = ("esm_logme", "logme", "leep", "nce", "textemb", "vocab")

BETA_CLAMP = 1e10
ALPHA_CLAMP = 1e10


@dataclass(frozen=True)
class Score:
    method: str
    value: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"{self.method} produced a non-finite score")


@dataclass
class LogmeDim:
    """Fixed-point result for one scalar target dimension."""

    alpha: float
    beta: float
    evidence: float  # per-example log evidence, L/n
    iterations: int
    clamped: bool = False


@dataclass
class LogMEResult:
    score: float
    per_dim: list[LogmeDim] = field(default_factory=list)
    n: int = 0
    d: int = 0

    @property
    def clamped(self) -> bool:
        return any(dim.clamped for dim in self.per_dim)


class FeatureDecomposition:
    """Eigendecomposition of the feature Gram matrix, computed once per
    feature matrix and shared across target dimensions and fixed-point steps.

    Evidence maximization only ever touches the feature matrix through the
    eigenvalues of F'F and the eigenbasis projection of F'y, so caching this
    makes scoring one source against many label columns cheap.
    """

    __slots__ = ("features", "n", "d", "eigvals", "eigvecs")

    def __init__(self, features: np.ndarray):
        f = np.ascontiguousarray(features, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError("features must be 2-D")
        self.features = f
        self.n, self.d = f.shape
        gram = f.T @ f
        if self.d >= 512:
            # syevd is the fastest LAPACK driver for dense symmetric problems
            # of this size; numpy's eigh picks syevd too, scipy lets us say so.
            from scipy.linalg import eigh
            eigvals, eigvecs = eigh(gram, driver="evd")
        else:
            eigvals, eigvecs = np.linalg.eigh(gram)
        self.eigvals = np.clip(eigvals, 0.0, None)
        self.eigvecs = eigvecs

    def project(self, y: np.ndarray) -> tuple[np.ndarray, float]:
        """Return (eigenbasis projection of F'y, squared norm of y)."""
        c = self.eigvecs.T @ (self.features.T @ y)
        return c, float(y @ y)

    def project_columns(self, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """project() for every column at once (one matmul pass)."""
        c = self.eigvecs.T @ (self.features.T @ cols)
        return c, np.einsum("ij,ij->j", cols, cols)


def _evidence_terms(n: int, d: int, alpha: float, beta: float, lam: np.ndarray,
                    ct: np.ndarray, y2: float) -> tuple[float, float, float, np.ndarray]:
    denom = alpha + beta * lam
    m = beta * ct / denom
    m2 = float(m @ m)
    r2 = float(lam @ (m * m) - 2.0 * (m @ ct) + y2)
    r2 = max(r2, 0.0)  # exact fits can go slightly negative in float
    evidence = (n / 2.0) * math.log(beta) + (d / 2.0) * math.log(alpha) \
        - (n / 2.0) * math.log(2.0 * math.pi) \
        - (beta / 2.0) * r2 - (alpha / 2.0) * m2 \
        - 0.5 * float(np.sum(np.log(denom)))
    return evidence, m2, r2, denom


def _maximize_evidence(decomp: FeatureDecomposition, ct: np.ndarray, y2: float,
                       tol: float, max_iter: int) -> LogmeDim:
    """Fixed-point iteration on (alpha, beta) for one target column, given the
    column's eigenbasis projection from FeatureDecomposition.project.

    Each step recomputes the posterior mean in the eigenbasis, then updates
    alpha = gamma / m'm and beta = (n - gamma) / |Fm - y|^2, where gamma is
    the effective number of well-determined directions. Stops when the
    per-example evidence moves by less than tol.
    """
    n, d = decomp.n, decomp.d
    lam = decomp.eigvals
    alpha = beta = 1.0
    clamped = False
    evidence = prev = None
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        evidence, m2, r2, denom = _evidence_terms(n, d, alpha, beta, lam, ct, y2)
        if prev is not None and abs(evidence - prev) / n < tol:
            break
        prev = evidence
        gamma = float(np.sum(beta * lam / denom))
        if m2 > 0.0:
            alpha = gamma / m2
            if alpha > ALPHA_CLAMP:
                alpha = ALPHA_CLAMP
                clamped = True
            alpha = max(alpha, 1e-300)
        if r2 > 0.0:
            beta = (n - gamma) / r2
        else:
            beta = math.inf  # exact fit: noise precision diverges
        if beta > BETA_CLAMP:
            beta = BETA_CLAMP
            clamped = True
    return LogmeDim(alpha=alpha, beta=beta, evidence=evidence / n,
                    iterations=iterations, clamped=clamped)


def _target_columns(labels: LabelData) -> np.ndarray:
    """Scalar regression targets, one column per evidence maximization:
    one-vs-rest 0/1 per class for classification, raw columns for regression."""
    if labels.kind == "classification":
        if labels.num_classes < 2:
            raise ValueError("classification labels must have at least 2 classes")
        cols = np.zeros((labels.n, labels.num_classes))
        cols[np.arange(labels.n), labels.classes] = 1.0
        return cols
    return labels.values.astype(np.float64)


def logme(features, labels: LabelData, *, normalize: bool = False,
          tol: float = 1e-6, max_iter: int = 100) -> LogMEResult:
    """Mean per-example log evidence across target dimensions.

    features may be an EmbeddingMatrix, a 2-D array, or a prebuilt
    FeatureDecomposition (normalize only applies to the first two).
    """
    if isinstance(features, FeatureDecomposition):
        decomp = features
    else:
        data = features.data if isinstance(features, EmbeddingMatrix) else np.asarray(features)
        data = np.asarray(data, dtype=np.float64)
        if normalize:
            norms = np.linalg.norm(data, axis=1, keepdims=True)
            data = data / np.where(norms == 0.0, 1.0, norms)
        decomp = FeatureDecomposition(data)
    if labels.n != decomp.n:
        raise ValueError(f"row count mismatch: {decomp.n} feature rows vs {labels.n} labels")
    if decomp.n < 2:
        raise ValueError("logme needs at least 2 examples")
    cols = _target_columns(labels)
    ct, y2 = decomp.project_columns(cols)
    per_dim = [_maximize_evidence(decomp, ct[:, j], float(y2[j]), tol, max_iter)
               for j in range(cols.shape[1])]
    score = float(np.mean([dim.evidence for dim in per_dim]))
    return LogMEResult(score=score, per_dim=per_dim, n=decomp.n, d=decomp.d)


def esm_logme(base_target_embeddings: EmbeddingMatrix, labels: LabelData,
              esm: Esm) -> Score:
    """logme on ESM-transformed base embeddings: the base embeddings are
    computed once per target and reused across every source's ESM."""
    transformed = apply_esm(esm, base_target_embeddings)
    result = logme(transformed, labels)
    return Score(method="esm_logme", value=result.score)


def leep(pseudo: PseudoLabelMatrix, labels: LabelData) -> Score:
    """Average log-likelihood of the true labels under the empirical
    label-given-pseudo-label conditional. Always <= 0; 0 only for a perfect
    deterministic predictor."""
    if labels.kind != "classification":
        raise ValueError("method undefined for regression")
    if pseudo.n != labels.n:
        raise ValueError(f"row count mismatch: {pseudo.n} pseudo rows vs {labels.n} labels")
    probs = pseudo.probs.astype(np.float64)
    n, z = probs.shape
    k = labels.num_classes
    joint = np.zeros((k, z))
    for y in range(k):
        joint[y] = probs[labels.classes == y].sum(axis=0)
    joint /= n
    mass = joint.sum(axis=0)
    keep = mass > 0.0  # pseudo-label columns with zero mass drop out
    cond = joint[:, keep] / mass[keep]
    lik = (cond[labels.classes] * probs[:, keep]).sum(axis=1)
    value = float(np.mean(np.log(lik)))
    return Score(method="leep", value=value)


def nce(pseudo: PseudoLabelMatrix, labels: LabelData) -> Score:
    """Negative conditional entropy of the true labels given hard pseudo-labels
    (row argmax, ties to the lowest index). Always <= 0."""
    if labels.kind != "classification":
        raise ValueError("method undefined for regression")
    if pseudo.n != labels.n:
        raise ValueError(f"row count mismatch: {pseudo.n} pseudo rows vs {labels.n} labels")
    hard = np.argmax(pseudo.probs, axis=1)  # np.argmax takes the first maximum
    n = pseudo.n
    k, z = labels.num_classes, pseudo.z
    counts = np.zeros((z, k))
    np.add.at(counts, (hard, labels.classes), 1.0)
    z_counts = counts.sum(axis=1)
    value = 0.0
    for zi in range(z):
        if z_counts[zi] == 0:
            continue
        nonzero = counts[zi] > 0
        value += float(np.sum(counts[zi][nonzero] * np.log(counts[zi][nonzero] / z_counts[zi])))
    return Score(method="nce", value=value / n)


def mean_pool(m: EmbeddingMatrix) -> np.ndarray:
    """Dataset representation: the mean of its embedding rows."""
    return m.data.astype(np.float64).mean(axis=0).astype(np.float32)


def textemb_score(source_repr: np.ndarray, target_repr: np.ndarray) -> Score:
    """Cosine similarity of two dataset representations, in [-1, 1]."""
    a = np.asarray(source_repr, dtype=np.float64).ravel()
    b = np.asarray(target_repr, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero-norm vector")
    return Score(method="textemb", value=float(a @ b / (na * nb)))


def vocab_overlap(a: TokenSet, b: TokenSet) -> Score:
    """Jaccard index |a∩b| / |a∪b| over sorted unique token ids."""
    if len(a) == 0 and len(b) == 0:
        raise ValueError("vocabulary overlap undefined for two empty token sets")
    warn_if_tokenizers_differ(a, b)
    inter = np.intersect1d(a.ids, b.ids, assume_unique=True).size
    union = len(a) + len(b) - inter
    return Score(method="vocab", value=inter / union)


def score_features(base_target_embeddings: EmbeddingMatrix, labels: LabelData) -> Score:
    """Plain logme of the given embeddings, wrapped as a Score."""
    pair_check(base_target_embeddings, labels)
    return Score(method="logme", value=logme(base_target_embeddings, labels).score)
