"""Embedding Space Maps: train and apply linear approximations of the effect
fine-tuning has on a model's embedding space.

An ESM is a single affine layer (weight + bias). Training pairs up base-model
embeddings with tuned-model embeddings of the same inputs and fits the map
that sends one to the other, either in closed form (ridge least squares) or
with the mini-batch recipe the maps were originally trained with.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Esm:
    """Affine map approximating a fine-tuned model's embedding function."""

    weight: np.ndarray  # d_out × d_in, float32
    bias: np.ndarray    # d_out, float32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight, dtype=np.float32)
        b = np.ascontiguousarray(self.bias, dtype=np.float32)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError(f"weight must be d_out×d_in with both >= 1, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match d_out {w.shape[0]}")
        if not np.isfinite(w).all() or not np.isfinite(b).all():
            raise ValueError("ESM parameters must be finite")
        self.weight = w
        self.bias = b

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def param_count(self) -> int:
        return self.d_out * self.d_in + self.d_out

    @classmethod
    def identity(cls, d: int, meta: dict | None = None) -> "Esm":
        return cls(weight=np.eye(d, dtype=np.float32),
                   bias=np.zeros(d, dtype=np.float32),
                   meta=meta or {})


@dataclass
class EsmTrainConfig:
    """Hyperparameters for the two trainers.

    ridge_lambda applies to the closed-form solver; the remaining fields drive
    the iterative one. Defaults follow the original training recipe: 10 epochs,
    learning rate 0.001, weight decay 0.01.
    """

    method: str = "closed_form"  # "closed_form" | "iterative"
    ridge_lambda: float = 0.0
    epochs: int = 10
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("closed_form", "iterative"):
            raise ValueError(f"unknown training method {self.method!r}")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _training_pair(base, tuned) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(base.data if hasattr(base, "data") else base, dtype=np.float64)
    y = np.asarray(tuned.data if hasattr(tuned, "data") else tuned, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("training embeddings must be 2-D")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row count mismatch: {x.shape[0]} base vs {y.shape[0]} tuned rows")
    if x.shape[1] < 1 or y.shape[1] < 1:
        raise ValueError("embedding dimension must be >= 1")
    if x.shape[0] < x.shape[1] + 1:
        warnings.warn(
            f"only {x.shape[0]} training rows for {x.shape[1]}+1 parameters per output "
            "dimension; the fit is underdetermined",
            stacklevel=3,
        )
    return x, y


def _train_meta(base, method: str, hyper: dict, mse: float, sse: float,
                source_task_id: str) -> dict:
    return {
        "base_model_id": getattr(base, "model_id", ""),
        "source_task_id": source_task_id,
        "train_method": method,
        "hyperparameters": hyper,
        "train_mse": mse,
        "train_sse": sse,
    }


def train_esm_closed_form(base, tuned, ridge_lambda: float = 0.0, *,
                          source_task_id: str = "") -> Esm:
    """Fit weight and bias minimizing sum of squared errors plus
    ridge_lambda times the squared Frobenius norm of the weight.

    Solved as one augmented least-squares problem: a constant column carries
    the bias, and sqrt(ridge_lambda)-scaled identity rows penalize the weight
    coefficients only, so the bias is never shrunk.
    """
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be nonnegative")
    x, y = _training_pair(base, tuned)
    n, d_in = x.shape
    a = np.concatenate([x, np.ones((n, 1))], axis=1)
    rhs = y
    if ridge_lambda > 0:
        penalty = np.concatenate(
            [np.sqrt(ridge_lambda) * np.eye(d_in), np.zeros((d_in, 1))], axis=1
        )
        a = np.concatenate([a, penalty], axis=0)
        rhs = np.concatenate([y, np.zeros((d_in, y.shape[1]))], axis=0)
    theta, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    weight = theta[:d_in].T
    bias = theta[d_in]
    resid = x @ weight.T + bias - y
    sse = float(np.sum(resid * resid))
    mse = float(np.mean(resid * resid))
    meta = _train_meta(base, "closed_form", {"ridge_lambda": ridge_lambda}, mse, sse,
                       source_task_id)
    return Esm(weight=weight, bias=bias, meta=meta)


def train_esm_iterative(base, tuned, cfg: EsmTrainConfig | None = None, *,
                        source_task_id: str = "") -> Esm:
    """Mini-batch gradient descent on mean squared error with decoupled weight
    decay (the bias is not decayed). Deterministic for a given cfg.seed: the
    shuffle order is the only randomness."""
    cfg = cfg or EsmTrainConfig(method="iterative")
    x, y = _training_pair(base, tuned)
    n, d_in = x.shape
    d_out = y.shape[1]
    weight = np.eye(d_out, d_in) if d_in == d_out else np.zeros((d_out, d_in))
    bias = np.zeros(d_out)
    rng = np.random.default_rng(cfg.seed)
    lr, wd = cfg.learning_rate, cfg.weight_decay
    mse = math.inf
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            err = x[rows] @ weight.T + bias - y[rows]
            scale = 2.0 / (rows.size * d_out)
            weight = weight - lr * scale * (err.T @ x[rows]) - lr * wd * weight
            bias = bias - lr * scale * err.sum(axis=0)
        with np.errstate(over="ignore", invalid="ignore"):
            mse = float(np.mean((x @ weight.T + bias - y) ** 2))
        if not np.isfinite(mse):
            raise ValueError(f"training diverged at epoch {epoch}: loss is non-finite")
    hyper = {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "weight_decay": cfg.weight_decay,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
    }
    sse = mse * n * d_out
    meta = _train_meta(base, "iterative", hyper, mse, sse, source_task_id)
    return Esm(weight=weight, bias=bias, meta=meta)


def apply_esm(esm: Esm, x):
    """Map embeddings through the ESM: row i of the output is
    weight @ x[i] + bias. Pure and thread-safe."""
    from .store import EmbeddingMatrix  # local import to avoid a module cycle

    data = x.data if hasattr(x, "data") else np.asarray(x, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("embeddings must be 2-D")
    if data.shape[1] != esm.d_in:
        raise ValueError(
            f"dimension mismatch: embeddings have d={data.shape[1]}, ESM expects {esm.d_in}"
        )
    out = data.astype(np.float32, copy=False) @ esm.weight.T
    out += esm.bias
    model_id = getattr(x, "model_id", "")
    return EmbeddingMatrix(data=out, model_id=model_id)
