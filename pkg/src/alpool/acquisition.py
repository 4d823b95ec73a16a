"""Per-round query selection.

Pointwise uncertainty scorers (entropy, least confidence, margin) rank
candidates independently; ALPS picks cluster-center-nearest embeddings;
BatchBALD greedily grows a batch by joint mutual information between
predictions and model parameters estimated from MC-dropout samples.
The multi-annotator scorers rank (sample, annotator) uncertainty from
per-annotator logits.

All scorers are pure functions of immutable snapshots.
"""

from __future__ import annotations

import numpy as np

from alpool.clustering import center_round_robin, elbow_select_k, kmeans
from alpool.core import validate_prob_vector
from alpool.model import softmax

ENTROPY_EPS = 0.0  # 0 * ln 0 is defined as 0, no clamp needed


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    positive = p > 0.0
    return float(-(p[positive] * np.log(p[positive])).sum())


def entropy_score(p) -> float:
    """Prediction uncertainty; higher is queried first."""
    return entropy(validate_prob_vector(p))


def least_confidence_score(p, sum_form: bool = False) -> float:
    """1 - max probability; higher is queried first.

    ``sum_form`` computes sum_j (1 - p_j) instead, which is identically
    c - 1 for any probability vector; it exists only so the constant can
    be demonstrated, never for selection.
    """
    p = validate_prob_vector(p)
    if sum_form:
        return float((1.0 - p).sum())
    return float(1.0 - p.max())


def margin_score(p) -> float:
    """Difference between the top two probabilities; lower is queried first."""
    p = validate_prob_vector(p)
    top2 = np.sort(p)[-2:]
    return float(top2[1] - top2[0])


POINTWISE = {
    "entropy": (entropy_score, "max"),
    "least_confidence": (least_confidence_score, "max"),
    "margin": (margin_score, "min"),
}


def rank_pointwise(strategy: str, ids: list[str], probs: np.ndarray, k: int) -> list[str]:
    """Top-k ids by the strategy's score, ties broken by ascending id."""
    scorer, direction = POINTWISE[strategy]
    scores = [scorer(probs[i]) for i in range(len(ids))]
    keyed = [(-s if direction == "max" else s, ids[i]) for i, s in enumerate(scores)]
    order = sorted(range(len(ids)), key=lambda i: keyed[i])
    return [ids[i] for i in order[:k]]


def alps_select(ids: list[str], embeddings: np.ndarray, k: int, seed: int,
                kmax: int = 10) -> list[str]:
    """k ids picked center-by-center from a K-means model of the candidates.

    K comes from the elbow sweep; centers then take turns claiming their
    nearest unchosen sample, so k = K yields one near-medoid per cluster.
    """
    if k > len(ids):
        raise ValueError(f"k={k} exceeds pool of {len(ids)}")
    X = np.asarray(embeddings, dtype=np.float64)
    K = elbow_select_k(X, K_max=min(kmax, max(3, len(ids))), seed=seed)
    model = kmeans(X, K, seed=seed)
    return [ids[i] for i in center_round_robin(X, model.centers, k)]


def bald_score(mc_probs: np.ndarray) -> float:
    """Pointwise mutual information H(mean_t p_t) - mean_t H(p_t)."""
    p = np.asarray(mc_probs, dtype=np.float64)
    return entropy(p.mean(axis=0)) - float(np.mean([entropy(row) for row in p]))


def joint_mutual_information(
    mc_probs: np.ndarray,
    batch: list[int],
    b_exact: int = 4,
    mc_outcomes: int = 1000,
    seed: int = 0,
) -> float:
    """I(y_1..y_b ; w) for a batch of candidate indices.

    The conditional term is exact. The joint entropy is exact (full
    enumeration of the c^b outcome space) up to ``b_exact`` batch members
    and estimated from ``mc_outcomes`` sampled outcome paths beyond that.
    """
    if not batch:
        return 0.0
    T, c = mc_probs.shape[1], mc_probs.shape[2]
    conditional = sum(
        float(np.mean([entropy(mc_probs[i, t]) for t in range(T)])) for i in batch
    )
    b = len(batch)
    if b <= b_exact:
        joint = np.ones((T, 1))
        for i in batch:
            joint = (joint[:, :, None] * mc_probs[i][:, None, :]).reshape(T, -1)
        outcome_probs = joint.mean(axis=0)
        joint_entropy = entropy(outcome_probs)
    else:
        rng = np.random.default_rng(seed)
        total = 0.0
        for _ in range(mc_outcomes):
            t = int(rng.integers(T))
            path = [int(rng.choice(c, p=mc_probs[i, t])) for i in batch]
            p_path = float(np.mean([np.prod([mc_probs[i, s, y] for i, y in zip(batch, path)])
                                    for s in range(T)]))
            total += -np.log(max(p_path, 1e-300))
        joint_entropy = total / mc_outcomes
    return joint_entropy - conditional


def batchbald_select(
    ids: list[str],
    mc_probs: np.ndarray,
    k: int,
    seed: int,
    b_exact: int = 4,
    mc_outcomes: int = 1000,
) -> list[str]:
    """Greedy batch construction maximizing joint mutual information.

    ``mc_probs`` has shape (n, T, c) with T >= 2 posterior samples per
    candidate. Equal scores resolve in a seed-shuffled candidate order.
    """
    n = len(ids)
    if mc_probs.shape[0] != n:
        raise ValueError("ids and mc_probs disagree on candidate count")
    if mc_probs.shape[1] < 2:
        raise ValueError("need at least T=2 posterior samples")
    if k > n:
        raise ValueError(f"k={k} exceeds pool of {n}")
    rng = np.random.default_rng(seed)
    scan_order = rng.permutation(n)
    batch: list[int] = []
    for _ in range(k):
        best_i, best_score = None, -np.inf
        for i in scan_order:
            if i in batch:
                continue
            score = joint_mutual_information(
                mc_probs, batch + [int(i)], b_exact=b_exact,
                mc_outcomes=mc_outcomes, seed=seed,
            )
            if score > best_score:
                best_i, best_score = int(i), score
        batch.append(best_i)
    return [ids[i] for i in batch]


# ---------------------------------------------------------------------------
# multi-annotator scorers: logits has shape (|A|, c), one row per annotator

def individual_entropy(logits: np.ndarray) -> np.ndarray:
    """Per-annotator entropy of softmax(z^a)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return np.array([entropy(softmax(row)) for row in z])


def pair_select(ids: list[str], logits: np.ndarray) -> tuple[str, int]:
    """(sample_id, annotator index) with the highest individual entropy."""
    best = None
    for i, sample_id in enumerate(ids):
        for a, h in enumerate(individual_entropy(logits[i])):
            if best is None or h > best[0] + 1e-15:
                best = (h, sample_id, a)
    return best[1], best[2]


def group_entropy(logits: np.ndarray) -> float:
    """Entropy of the re-normalized sum of per-annotator distributions.

    Raw logit sums are shift-ambiguous, so each annotator's logits are
    normalized through softmax before summing; the sum is pushed through
    softmax again to score it. That second softmax acts as a temperature
    change, so for more than two classes identical annotators need not
    rank samples exactly like a lone annotator (they provably do for two).
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    z_group = softmax(z).sum(axis=0)
    return entropy(softmax(z_group))


def vote_variance(votes) -> float:
    """Population variance of the votes as numeric class indices.

    Sensitive to label ordering by construction.
    """
    y = np.asarray(votes, dtype=np.float64)
    if y.size == 0:
        raise ValueError("votes must be non-empty")
    return float(((y - y.mean()) ** 2).mean())


def mix_entropy(logits: np.ndarray, individual_reduce: str = "mean") -> float:
    """Individual entropy (reduced over annotators) plus group entropy."""
    h_indi = individual_entropy(logits)
    reduced = float(h_indi.max() if individual_reduce == "max" else h_indi.mean())
    return reduced + group_entropy(logits)


MULTI_ANNOTATOR = ("indi", "group", "vote", "mix")


def rank_multi_annotator(
    strategy: str, ids: list[str], logits: np.ndarray, k: int,
    votes: np.ndarray | None = None, mix_reduce: str = "mean",
) -> list[str]:
    """Top-k ids by a multi-annotator uncertainty score (higher first)."""
    if strategy == "indi":
        scores = [float(individual_entropy(logits[i]).max()) for i in range(len(ids))]
    elif strategy == "group":
        scores = [group_entropy(logits[i]) for i in range(len(ids))]
    elif strategy == "vote":
        if votes is None:
            raise ValueError("vote strategy needs per-annotator votes")
        scores = [vote_variance(votes[i]) for i in range(len(ids))]
    elif strategy == "mix":
        scores = [mix_entropy(logits[i], individual_reduce=mix_reduce) for i in range(len(ids))]
    else:
        raise ValueError(f"unknown multi-annotator strategy {strategy!r}")
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order[:k]]


def annotator_logits_from_model(probs: np.ndarray, confusions: list[np.ndarray],
                                clamp: float = 1e-12) -> np.ndarray:
    """Per-annotator prediction logits induced by the model's belief.

    An annotator with confusion matrix C labels class j with probability
    sum_y p_model(y|x) C[y, j]; its logits are the logs of that mix. Result
    shape: (n_samples, n_annotators, c).
    """
    probs = np.asarray(probs, dtype=np.float64)
    stacked = np.stack([probs @ np.asarray(c, dtype=np.float64) for c in confusions], axis=1)
    return np.log(np.maximum(stacked, clamp))
