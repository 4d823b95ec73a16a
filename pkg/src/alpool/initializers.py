"""Cold-start selection of the first labeled set.

Four strategies: cluster-center proximity (kmeans), density scoring
(dacs), probability-divergence scoring (bmal) and uniform random. Every
initializer returns exactly max(1, floor(fraction * N)) distinct ids from
the unlabeled set, deterministically for a fixed seed; ids are processed
in canonical sorted order so the result does not depend on pool insertion
order.
"""

from __future__ import annotations

import numpy as np

from alpool.core import Pool, validate_prob_vector
from alpool.clustering import center_round_robin, elbow_select_k, kmeans

KL_CLAMP = 1e-12


def init_count(pool_size: int, fraction: float) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    return max(1, int(fraction * pool_size))


def kmeans_init(pool: Pool, fraction: float, seed: int, kmax: int = 10) -> list[str]:
    """Ids closest to cluster centers, one center at a time in round-robin.

    K comes from the elbow sweep. Within each pass over the centers the
    center whose nearest unchosen sample is closest is served first, so a
    single-sample selection is the globally center-nearest point.
    """
    ids = pool.unlabeled_ids()
    if not ids:
        raise ValueError("pool has no unlabeled samples")
    m = init_count(len(pool), fraction)
    X = pool.features_of(ids)
    K = elbow_select_k(X, K_max=min(kmax, max(3, len(ids))), seed=seed)
    model = kmeans(X, K, seed=seed)
    return [ids[i] for i in center_round_robin(X, model.centers, m)]


def dacs_score(x_i, X_others, k_nn: int) -> float:
    """Mean squared Euclidean distance to the k nearest neighbors."""
    x_i = np.asarray(x_i, dtype=np.float64)
    X_others = np.asarray(X_others, dtype=np.float64)
    if X_others.shape[0] < k_nn:
        raise ValueError(f"need at least {k_nn} neighbors, have {X_others.shape[0]}")
    d2 = ((X_others - x_i) ** 2).sum(axis=1)
    nearest = np.sort(d2)[:k_nn]
    return float(nearest.mean())


def dacs_init(pool: Pool, fraction: float, seed: int = 0, k_nn: int = 10) -> list[str]:
    """Top ids by density score (sparsest regions first)."""
    ids = pool.unlabeled_ids()
    if len(ids) < k_nn + 1:
        raise ValueError(f"pool of {len(ids)} too small for k_nn={k_nn}")
    m = init_count(len(pool), fraction)
    X = pool.features_of(ids)
    scores = np.array(
        [dacs_score(X[i], np.delete(X, i, axis=0), k_nn) for i in range(len(ids))]
    )
    order = np.argsort(-scores, kind="stable")  # ties resolve to the lower id
    return [ids[i] for i in order[:m]]


def bmal_divergence(p_i, p_j) -> float:
    """KL(p_i || p_j) with 0 * log(0/q) = 0 and the denominator clamped."""
    p = validate_prob_vector(p_i)
    q = validate_prob_vector(p_j)
    if p.shape != q.shape:
        raise ValueError("probability vectors differ in length")
    positive = p > 0.0
    return float((p[positive] * np.log(p[positive] / np.maximum(q[positive], KL_CLAMP))).sum())


def _pseudo_probs(X: np.ndarray, class_count: int, seed: int) -> np.ndarray:
    """Label-free per-sample class distributions from cluster proximity.

    No model exists yet at initialization time, so class probabilities are
    approximated by normalized inverse squared distances to K = class_count
    cluster centers.
    """
    model = kmeans(X, min(class_count, np.unique(X, axis=0).shape[0]), seed=seed)
    d2 = ((X[:, None, :] - model.centers[None]) ** 2).sum(axis=2)
    inv = 1.0 / (d2 + 1e-9)
    return inv / inv.sum(axis=1, keepdims=True)


def bmal_init(pool: Pool, fraction: float, seed: int, k_nn: int = 10) -> list[str]:
    """Top ids by mean KL divergence to their feature-space nearest neighbors."""
    ids = pool.unlabeled_ids()
    if len(ids) < k_nn + 1:
        raise ValueError(f"pool of {len(ids)} too small for k_nn={k_nn}")
    m = init_count(len(pool), fraction)
    X = pool.features_of(ids)
    probs = _pseudo_probs(X, pool.class_count, seed)
    d2 = ((X[:, None, :] - X[None]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    scores = np.empty(len(ids))
    for i in range(len(ids)):
        neighbors = np.argsort(d2[i], kind="stable")[:k_nn]
        scores[i] = np.mean([bmal_divergence(probs[i], probs[j]) for j in neighbors])
    order = np.argsort(-scores, kind="stable")
    return [ids[i] for i in order[:m]]


def random_init(pool: Pool, fraction: float, seed: int) -> list[str]:
    """Uniform sample without replacement."""
    ids = pool.unlabeled_ids()
    m = init_count(len(pool), fraction)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=m, replace=False)
    return [ids[i] for i in picked]


INITIALIZER_FNS = {
    "kmeans": kmeans_init,
    "dacs": dacs_init,
    "bmal": bmal_init,
    "random": random_init,
}


def run_initializer(name: str, pool: Pool, fraction: float, seed: int, **kwargs) -> list[str]:
    if name not in INITIALIZER_FNS:
        raise ValueError(f"unknown initializer {name!r}")
    return INITIALIZER_FNS[name](pool, fraction, seed, **kwargs)
