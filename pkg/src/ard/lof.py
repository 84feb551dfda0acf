"""Relational outlier detection: local-outlier-factor scoring and the
known/novel split of a mixed pool.

Definitions (Euclidean metric throughout):

* k-distance of p: distance to its k-th nearest other point; the
  neighborhood N_k(p) is every other point within that distance, so ties
  make it larger than k.
* reachability distance rd(p, q) = max(k-distance(q), d(p, q)).
* local density den(p) = 1 / max(eps, mean reachability distance to N_k(p)).
* LOF(p) = mean of den(q)/den(p) over q in N_k(p); values well above 1 mark
  points sitting in sparser surroundings than their neighbors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._kernels import BACKEND, pool_lof
from .data import Dataset

__all__ = [
    "LofConfig",
    "LofReport",
    "k_distance",
    "reach_dist",
    "local_density",
    "lof_scores",
    "split_known_novel",
    "write_lof_csv",
    "BACKEND",
]


@dataclass(frozen=True)
class LofConfig:
    k: int = 20
    threshold_mode: str = "fixed"
    theta: float = 1.5
    novel_quantile: float = 0.25
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.threshold_mode not in ("fixed", "quantile"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if not 0.0 < self.novel_quantile < 1.0:
            raise ValueError("novel_quantile must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class LofReport:
    scores: np.ndarray
    is_novel: np.ndarray
    k_used: int
    theta_used: float

    def __post_init__(self):
        if len(self.scores) != len(self.is_novel):
            raise ValueError("scores and flags must have equal length")
        if not (np.isfinite(self.scores).all() and (self.scores > 0).all()):
            raise ValueError("LOF scores must be positive and finite")


def _check_pool(points: np.ndarray, k: int) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    if pts.shape[0] < k + 1:
        raise ValueError(f"pool of {pts.shape[0]} points cannot support k={k}")
    return pts


def k_distance(points: np.ndarray, i: int, k: int) -> tuple[float, np.ndarray]:
    """Distance to the k-th nearest other point plus the tie-inclusive
    neighbor index set (ascending)."""
    pts = _check_pool(points, k)
    d = np.linalg.norm(pts - pts[i], axis=1)
    d[i] = np.inf
    kth = float(np.partition(d, k - 1)[k - 1])
    return kth, np.flatnonzero(d <= kth)


def reach_dist(points: np.ndarray, i: int, j: int, k: int) -> float:
    if i == j:
        raise ValueError("reachability distance needs two distinct points")
    pts = _check_pool(points, k)
    kd_j, _ = k_distance(pts, j, k)
    return max(kd_j, float(np.linalg.norm(pts[i] - pts[j])))


def local_density(points: np.ndarray, i: int, k: int, eps: float = 1e-12) -> float:
    pts = _check_pool(points, k)
    _, nbrs = k_distance(pts, i, k)
    mean_rd = float(np.mean([reach_dist(pts, i, int(j), k) for j in nbrs]))
    return 1.0 / max(eps, mean_rd)


def lof_scores(points: np.ndarray, k: int, eps: float = 1e-12) -> np.ndarray:
    """LOF for every row of ``points`` via the selected kernel backend."""
    pts = _check_pool(points, k)
    scores, _ = pool_lof(pts, k, eps)
    return scores


def _novel_flags(scores: np.ndarray, ids: list[str], cfg: LofConfig) -> np.ndarray:
    if cfg.threshold_mode == "fixed":
        return scores > cfg.theta
    n_novel = int(cfg.novel_quantile * len(scores))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    flags = np.zeros(len(scores), dtype=bool)
    flags[order[:n_novel]] = True
    return flags


def split_known_novel(pool: Dataset, model, cfg: LofConfig) -> tuple[Dataset, Dataset, LofReport]:
    """Partition a mixed pool into (known-looking, novel-looking) sets.

    The pool is embedded with the representation model, LOF-scored, and cut
    either at the fixed ``theta`` or at the top ``novel_quantile`` fraction
    (ties broken by instance id).
    """
    from .represent import embed_all

    points = embed_all(model, pool)
    scores = lof_scores(points, cfg.k, cfg.epsilon)
    flags = _novel_flags(scores, pool.ids(), cfg)
    known = Dataset(tuple(inst for inst, f in zip(pool, flags) if not f))
    novel = Dataset(tuple(inst for inst, f in zip(pool, flags) if f))
    report = LofReport(scores=scores, is_novel=flags, k_used=cfg.k, theta_used=cfg.theta)
    return known, novel, report


def write_lof_csv(path, pool: Dataset, report: LofReport, known_relations=None) -> None:
    """Per-instance score CSV; gold novelty is included when derivable."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "lof_score", "is_novel", "gold_is_novel"])
        for inst, score, flag in zip(pool, report.scores, report.is_novel):
            if known_relations is not None and inst.gold_relation is not None:
                gold = str(inst.gold_relation not in known_relations).lower()
            else:
                gold = ""
            writer.writerow([inst.id, repr(float(score)), str(bool(flag)).lower(), gold])
