"""K-means (Lloyd's algorithm) with elbow-based K selection.

Initial centers are drawn uniformly from distinct data points. A single
Lloyd run can land in a poor local optimum with that init, so
:func:`kmeans` runs several seeded restarts and keeps the lowest-SSE
model (sklearn's ``n_init`` convention); everything stays deterministic
for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterModel:
    """Fitted clustering: centers, per-row assignments and total SSE."""

    K: int
    centers: np.ndarray
    assignments: np.ndarray
    sse: float


def _assign(X: np.ndarray, centers: np.ndarray):
    distances = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assignments = distances.argmin(axis=1)  # argmin takes the lowest index on ties
    sse = float(distances[np.arange(X.shape[0]), assignments].sum())
    return assignments, sse


def _lloyd(X: np.ndarray, init_centers: np.ndarray, max_iters: int) -> ClusterModel:
    centers = init_centers.copy()
    K = centers.shape[0]
    assignments, sse = _assign(X, centers)
    for _ in range(max_iters):
        new_centers = centers.copy()
        for k in range(K):
            members = assignments == k
            if members.any():
                new_centers[k] = X[members].mean(axis=0)
        # reseed each empty cluster to the point farthest from its own center
        counts = np.bincount(assignments, minlength=K)
        if (counts == 0).any():
            point_dist = ((X - new_centers[assignments]) ** 2).sum(axis=1)
            taken: set[int] = set()
            for k in np.nonzero(counts == 0)[0]:
                order = np.argsort(-point_dist, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                new_centers[k] = X[pick]
        new_assignments, new_sse = _assign(X, new_centers)
        assert new_sse <= sse + 1e-9, "Lloyd iteration increased SSE"
        converged = np.array_equal(new_assignments, assignments)
        centers, assignments, sse = new_centers, new_assignments, new_sse
        if converged:
            break
    return ClusterModel(K=K, centers=centers, assignments=assignments, sse=sse)


def kmeans(X, K: int, seed: int, max_iters: int = 100, restarts: int = 10) -> ClusterModel:
    """Best-of-``restarts`` Lloyd clustering, deterministic per seed.

    Initial centers are K distinct data points sampled uniformly. Raises
    when fewer than K distinct points exist.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-d array")
    if K < 1:
        raise ValueError("K must be >= 1")
    distinct = np.unique(X, axis=0)
    if K > distinct.shape[0]:
        raise ValueError(f"K={K} exceeds {distinct.shape[0]} distinct points")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(K,)))
    best: ClusterModel | None = None
    for _ in range(restarts):
        idx = rng.choice(distinct.shape[0], size=K, replace=False)
        model = _lloyd(X, distinct[idx], max_iters)
        if best is None or model.sse < best.sse - 1e-12:
            best = model
    return best


def center_round_robin(X: np.ndarray, centers: np.ndarray, m: int) -> list[int]:
    """Pick m row indices by serving centers in round-robin.

    Within each pass the center whose nearest unchosen point is closest is
    served first and claims that point, so a single pick is the globally
    center-nearest point and a full pass takes one near-medoid per center.
    """
    X = np.asarray(X, dtype=np.float64)
    distances = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    K = centers.shape[0]
    chosen: list[int] = []
    available = np.ones(X.shape[0], dtype=bool)
    while len(chosen) < m and available.any():
        served: set[int] = set()
        while len(served) < K and len(chosen) < m and available.any():
            best = None
            for k in range(K):
                if k in served:
                    continue
                column = np.where(available, distances[:, k], np.inf)
                row = int(column.argmin())
                if best is None or column[row] < best[0]:
                    best = (column[row], row, k)
            _, row, k = best
            chosen.append(row)
            available[row] = False
            served.add(k)
    return chosen


def elbow_select_k(X, K_max: int = 10, seed: int = 0, restarts: int = 10) -> int:
    """Pick K at the sharpest bend of the SSE curve.

    Runs kmeans for K = 1..K_max and returns the interior K maximizing the
    discrete second difference sse(K-1) - 2*sse(K) + sse(K+1); ties go to
    the smaller K. Fewer than 3 distinct points short-circuits to K = 1.
    """
    if K_max < 3:
        raise ValueError("K_max must be >= 3")
    X = np.asarray(X, dtype=np.float64)
    n_distinct = np.unique(X, axis=0).shape[0]
    if n_distinct < 3:
        return 1
    k_hi = min(K_max, n_distinct)
    sse = {k: kmeans(X, k, seed=seed, restarts=restarts).sse for k in range(1, k_hi + 1)}
    best_k, best_d2 = 2, -np.inf
    for k in range(2, k_hi):
        d2 = sse[k - 1] - 2.0 * sse[k] + sse[k + 1]
        if d2 > best_d2 + 1e-12:
            best_k, best_d2 = k, d2
    return best_k
