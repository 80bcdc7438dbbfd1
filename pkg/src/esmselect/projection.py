"""Deterministic 2-D projection of embeddings for plotting."""

from __future__ import annotations

import numpy as np


def project_2d(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-2 principal components of mean-centered data.

    Returns (coords n×2, components 2×d). Components are sign-fixed so the
    largest-magnitude loading in each is positive, which makes the output
    byte-stable across runs and platforms. Rank-1 data yields an all-zero
    second column; rank-0 data is rejected.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("projection input must be 2-D")
    n, d = x.shape
    if n < 3:
        raise ValueError("projection needs at least 3 rows")
    centered = x - x.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    scale = svals[0]
    if scale == 0.0:
        raise ValueError("degenerate rank-0 data: all rows identical")
    k = min(2, vt.shape[0])
    components = np.zeros((2, d))
    components[:k] = vt[:k]
    # zero out directions that only exist as numerical noise
    for i in range(k):
        if svals[i] <= 1e-12 * scale:
            components[i] = 0.0
    for i in range(2):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    coords = centered @ components.T
    return coords, components
