"""Domain types and the labeled/unlabeled pool state machine.

The pool partitions every sample id into exactly one of three sets:
``unlabeled`` (candidates for acquisition), ``pending`` (staged for
annotation) and ``labeled`` (committed with a :class:`LabelRecord`).
All mutation goes through :meth:`Pool.stage_query` and
:meth:`Pool.commit_labels`, both of which are atomic: a bad id anywhere
in the batch leaves the pool untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_SUM_TOL = 1e-9


class PoolError(ValueError):
    """Raised when a pool operation would violate the partition invariants."""


class ConfigError(ValueError):
    """Raised for invalid experiment configuration; carries the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


def validate_prob_vector(probs, class_count: int | None = None) -> np.ndarray:
    """Check a class-probability vector and return it as a float64 array.

    Entries must lie in [0, 1] and sum to 1 within ``PROB_SUM_TOL``. When
    ``class_count`` is given the length must match it.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"probability vector must be 1-d, got shape {p.shape}")
    if class_count is not None and p.shape[0] != class_count:
        raise ValueError(f"expected {class_count} classes, got {p.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability vector has non-finite entries")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probability entries must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def soft_label_from_votes(
    votes: Sequence[Sequence[int]], class_count: int
) -> tuple[Fraction, ...]:
    """Normalize per-annotator vote sets into an exact rational soft label.

    Each annotator contributes a multi-hot vector (one count per distinct
    label they emitted); the soft label is the elementwise sum divided by
    the total number of emitted labels, so every entry is a rational with
    the total vote count as denominator.
    """
    if not votes:
        raise ValueError("votes must be non-empty")
    counts = [0] * class_count
    total = 0
    for vote_set in votes:
        if not vote_set:
            raise ValueError("each annotator must emit at least one label")
        if len(set(vote_set)) != len(vote_set):
            raise ValueError("an annotator's vote set must not repeat a label")
        for label in vote_set:
            if not 0 <= label < class_count:
                raise ValueError(f"vote label {label} out of range [0, {class_count})")
            counts[label] += 1
            total += 1
    return tuple(Fraction(n, total) for n in counts)


@dataclass
class Sample:
    """One pool element: an id, a feature vector and an optional hidden label."""

    id: str
    features: np.ndarray
    true_label: int | None = None
    audio_ref: str | None = None
    source: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1:
            raise ValueError(f"sample {self.id}: features must be a 1-d vector")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"sample {self.id}: non-finite feature value")


@dataclass(frozen=True)
class LabelRecord:
    """A committed annotation: hard class index or soft vote-derived label.

    Exactly one of ``hard`` / ``soft`` is set. A soft record must carry the
    votes it was aggregated from, and the stored soft label must be exactly
    reproducible from those votes.
    """

    sample_id: str
    hard: int | None = None
    soft: tuple[Fraction, ...] | None = None
    votes: tuple[tuple[int, ...], ...] | None = None
    annotator_ids: tuple[str, ...] | None = None
    iteration_acquired: int = 0

    def __post_init__(self):
        if (self.hard is None) == (self.soft is None):
            raise ValueError("exactly one of hard/soft must be set")
        if self.iteration_acquired < 0:
            raise ValueError("iteration_acquired must be >= 0")
        if self.soft is not None:
            if not self.votes:
                raise ValueError("soft label requires non-empty votes")
            recomputed = soft_label_from_votes(self.votes, len(self.soft))
            if recomputed != self.soft:
                raise ValueError(
                    f"soft label {self.soft} not reproducible from votes {self.votes}"
                )

    @property
    def kind(self) -> str:
        return "hard" if self.hard is not None else "soft"

    def target_vector(self, class_count: int) -> np.ndarray:
        """Training target: one-hot for hard labels, float soft label otherwise."""
        if self.hard is not None:
            if not 0 <= self.hard < class_count:
                raise ValueError(f"hard label {self.hard} out of range")
            target = np.zeros(class_count)
            target[self.hard] = 1.0
            return target
        if len(self.soft) != class_count:
            raise ValueError("soft label length does not match class count")
        return np.array([float(v) for v in self.soft])


class Pool:
    """Mutable partition of a dataset into unlabeled / pending / labeled sets.

    Single-writer: callers must not mutate concurrently. All read accessors
    return copies or fresh arrays so scorer code can treat them as snapshots.
    """

    def __init__(self, samples: Iterable[Sample], class_count: int):
        if class_count < 2:
            raise ValueError("class_count must be >= 2")
        self.class_count = class_count
        self.all: dict[str, Sample] = {}
        feature_dim = None
        for sample in samples:
            if sample.id in self.all:
                raise ValueError(f"duplicate sample id {sample.id!r}")
            if feature_dim is None:
                feature_dim = sample.features.shape[0]
            elif sample.features.shape[0] != feature_dim:
                raise ValueError(
                    f"sample {sample.id}: feature dim {sample.features.shape[0]}"
                    f" != {feature_dim}"
                )
            if sample.true_label is not None and not 0 <= sample.true_label < class_count:
                raise ValueError(f"sample {sample.id}: label {sample.true_label} out of range")
            self.all[sample.id] = sample
        if not self.all:
            raise ValueError("pool must contain at least one sample")
        self.feature_dim = feature_dim
        self.unlabeled: set[str] = set(self.all)
        self.pending: set[str] = set()
        self.labeled: dict[str, LabelRecord] = {}
        self.iteration = 0

    def __len__(self) -> int:
        return len(self.all)

    def check_invariants(self):
        """Assert the three sets are disjoint and cover every id."""
        labeled = set(self.labeled)
        assert labeled.isdisjoint(self.unlabeled)
        assert labeled.isdisjoint(self.pending)
        assert self.unlabeled.isdisjoint(self.pending)
        assert labeled | self.unlabeled | self.pending == set(self.all)
        assert len(labeled) + len(self.unlabeled) + len(self.pending) == len(self.all)

    def unlabeled_ids(self) -> list[str]:
        """Unlabeled ids in canonical (sorted) order."""
        return sorted(self.unlabeled)

    def pending_ids(self) -> list[str]:
        return sorted(self.pending)

    def labeled_ids(self) -> list[str]:
        return sorted(self.labeled)

    def features_of(self, ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.all[i].features for i in ids]) if ids else np.zeros((0, self.feature_dim))

    def stage_query(self, ids: Sequence[str]):
        """Move ids from unlabeled to pending; atomic on any bad id."""
        batch = list(ids)
        if len(set(batch)) != len(batch):
            raise PoolError("duplicate id in stage batch")
        for i in batch:
            if i not in self.unlabeled:
                raise PoolError(f"id {i!r} is not unlabeled (cannot stage)")
        for i in batch:
            self.unlabeled.discard(i)
            self.pending.add(i)

    def commit_labels(self, records: Sequence[LabelRecord]):
        """Move each record's id from pending to labeled; atomic on any bad id."""
        batch = list(records)
        ids = [r.sample_id for r in batch]
        if len(set(ids)) != len(ids):
            raise PoolError("duplicate sample_id in commit batch")
        for record in batch:
            if record.sample_id not in self.pending:
                raise PoolError(f"id {record.sample_id!r} is not pending (cannot commit)")
            if record.hard is not None and not 0 <= record.hard < self.class_count:
                raise PoolError(f"id {record.sample_id!r}: hard label out of range")
            if record.soft is not None and len(record.soft) != self.class_count:
                raise PoolError(f"id {record.sample_id!r}: soft label length mismatch")
        for record in batch:
            self.pending.discard(record.sample_id)
            self.labeled[record.sample_id] = record

    def state_dict(self) -> dict:
        """JSON-serializable snapshot of the partition and committed records."""
        return {
            "class_count": self.class_count,
            "iteration": self.iteration,
            "unlabeled": sorted(self.unlabeled),
            "pending": sorted(self.pending),
            "labeled": [
                {
                    "sample_id": r.sample_id,
                    "hard": r.hard,
                    "soft": [[v.numerator, v.denominator] for v in r.soft]
                    if r.soft is not None
                    else None,
                    "votes": [list(v) for v in r.votes] if r.votes is not None else None,
                    "annotator_ids": list(r.annotator_ids)
                    if r.annotator_ids is not None
                    else None,
                    "iteration_acquired": r.iteration_acquired,
                }
                for _, r in sorted(self.labeled.items())
            ],
        }

    def apply_state(self, state: Mapping):
        """Restore a snapshot produced by :meth:`state_dict` onto the same dataset."""
        ids = set(state["unlabeled"]) | set(state["pending"])
        ids |= {r["sample_id"] for r in state["labeled"]}
        if ids != set(self.all):
            raise PoolError("snapshot does not cover exactly this dataset's ids")
        self.class_count = state["class_count"]
        self.iteration = state["iteration"]
        self.unlabeled = set(state["unlabeled"])
        self.pending = set(state["pending"])
        self.labeled = {}
        for row in state["labeled"]:
            self.labeled[row["sample_id"]] = LabelRecord(
                sample_id=row["sample_id"],
                hard=row["hard"],
                soft=tuple(Fraction(n, d) for n, d in row["soft"])
                if row["soft"] is not None
                else None,
                votes=tuple(tuple(v) for v in row["votes"])
                if row["votes"] is not None
                else None,
                annotator_ids=tuple(row["annotator_ids"])
                if row["annotator_ids"] is not None
                else None,
                iteration_acquired=row["iteration_acquired"],
            )
        self.check_invariants()


def split_budget(budget: int, iterations: int) -> int:
    """Per-round acquisition size: floor(budget / iterations).

    Any remainder of the budget is dropped; the final round is not padded.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if budget < iterations:
        raise ValueError(f"budget {budget} smaller than iterations {iterations}")
    return budget // iterations


STRATEGIES = (
    "entropy", "least_confidence", "margin", "alps", "batchbald", "random",
    "indi", "group", "vote", "mix",
)
INITIALIZERS = ("kmeans", "dacs", "bmal", "random")
ANNOTATOR_MODES = ("oracle", "simulated_multi", "human")


@dataclass
class ExperimentConfig:
    """Everything a run needs to be reproducible from its seed.

    Field names are the config-file keys, verbatim.
    """

    strategy: str = "entropy"
    initializer: str = "kmeans"
    init_fraction: float = 0.01
    budget: int = 100
    iterations: int = 5
    seed: int = 0
    hidden_width: int = 64
    dropout_rate: float = 0.3
    learning_rate: float = 0.1
    epochs: int = 100
    patience: int = 20
    tapt_enabled: bool = False
    annotator_mode: str = "oracle"
    mc_samples: int = 20
    # architecture/TAPT knobs with per-run defaults
    architecture: str = "one_hidden"
    warm_start: bool = True
    tapt_epochs: int = 30
    tapt_hidden: int = 8
    tapt_codebook: int = 16
    tapt_frames: int = 8
    tapt_mask_ratio: float = 0.15
    kmax: int = 10
    knn: int = 10
    mix_reduce: str = "mean"

    def __post_init__(self):
        if self.mix_reduce not in ("mean", "max"):
            raise ConfigError("mix_reduce", "must be 'mean' or 'max'")

    def validate(self, pool_size: int | None = None):
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"unknown strategy {self.strategy!r}")
        if self.initializer not in INITIALIZERS:
            raise ConfigError("initializer", f"unknown initializer {self.initializer!r}")
        if self.annotator_mode not in ANNOTATOR_MODES:
            raise ConfigError("annotator_mode", f"unknown mode {self.annotator_mode!r}")
        if self.iterations < 1:
            raise ConfigError("iterations", "must be >= 1")
        if self.budget < self.iterations:
            raise ConfigError("budget", "must be >= iterations")
        if not 0.0 < self.init_fraction <= 1.0:
            raise ConfigError("init_fraction", "must be in (0, 1]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate", "must be in [0, 1)")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples", "must be >= 1")
        if self.architecture not in ("linear", "one_hidden"):
            raise ConfigError("architecture", f"unknown architecture {self.architecture!r}")
        if pool_size is not None:
            if self.budget > pool_size:
                raise ConfigError("budget", f"exceeds pool size {pool_size}")
            if self.init_fraction * pool_size < 1.0:
                raise ConfigError("init_fraction", "selects no samples for this pool")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(key, "unknown key")
            kwargs[key] = value
        config = cls(**kwargs)
        config.validate()
        return config

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
