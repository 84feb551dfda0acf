"""NumPy/SciPy implementation of the pooled LOF scoring kernel.

Distances are evaluated exhaustively in row blocks so the full n x n matrix
is never materialized. This is the fallback backend; the compiled extension
in ``_lof_cy`` implements the same contract.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

# ~64 MB of float64 per distance block.
_BLOCK_BUDGET = 8_000_000


def pool_lof(points: np.ndarray, k: int, eps: float):
    """LOF scores for every row of ``points``.

    Returns ``(scores, k_dists)``. The neighborhood of a row is every other
    row within its k-th nearest-neighbor distance (distance ties included).
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < k + 1:
        raise ValueError(f"pool of {n} points cannot support k={k}")

    k_dists = np.empty(n)
    nbr_idx: list[np.ndarray] = [None] * n
    nbr_dist: list[np.ndarray] = [None] * n

    block = max(1, _BLOCK_BUDGET // n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = cdist(pts[start:stop], pts)
        rows = np.arange(start, stop)
        d[rows - start, rows] = np.inf
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            mask = d[r] <= kth[r]
            idx = np.flatnonzero(mask)
            nbr_idx[start + r] = idx
            nbr_dist[start + r] = d[r, idx]
        k_dists[start:stop] = kth

    dens = np.empty(n)
    for i in range(n):
        reach = np.maximum(k_dists[nbr_idx[i]], nbr_dist[i])
        dens[i] = 1.0 / max(eps, reach.mean())

    scores = np.empty(n)
    for i in range(n):
        scores[i] = dens[nbr_idx[i]].mean() / dens[i]
    return scores, k_dists
