"""Label provisioning: masked oracle, simulated annotators, human queue.

The oracle reveals a sample's hidden label only once the sample is staged
(pending), and counts every read so experiments can assert they touched
exactly the labels they paid for. Simulated annotators draw from
per-annotator confusion matrices and may emit a second label. Human mode
goes through :class:`LabelQueue`, the one concurrently-mutated structure
in the system: many readers, serialized commits.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from alpool.core import LabelRecord, Pool, soft_label_from_votes


class AnnotationError(ValueError):
    pass


class AnnotationConflict(AnnotationError):
    """The sample is not open for labeling (already labeled or never queued)."""


class AnnotationTimeout(TimeoutError):
    """Raised when awaited labels did not all arrive; the loop stays paused."""

    def __init__(self, missing: list[str]):
        self.missing = missing
        super().__init__(f"still awaiting labels for {len(missing)} samples")


def aggregate_soft(votes: Sequence[Sequence[int]], class_count: int) -> tuple[Fraction, ...]:
    """Vote-count soft label: multi-hot sums over annotators / total votes.

    Exact rationals; e.g. three annotators voting (class 3), (class 3),
    (classes 3+2) on four classes give (0, 0, 1/4, 3/4).
    """
    return soft_label_from_votes(votes, class_count)


def hard_from_votes(votes: Sequence[Sequence[int]], class_count: int) -> int:
    """Majority class over all emitted labels; ties go to the lowest index."""
    counts = [0] * class_count
    for vote_set in votes:
        for label in vote_set:
            if not 0 <= label < class_count:
                raise AnnotationError(f"vote label {label} out of range")
            counts[label] += 1
    if sum(counts) == 0:
        raise AnnotationError("no votes")
    return int(np.argmax(counts))  # argmax returns the first maximum


class Oracle:
    """Reveals hidden labels for pending samples only, counting every read."""

    def __init__(self, pool: Pool):
        self.pool = pool
        self.reads = 0

    def label(self, sample_id: str, iteration: int = 0) -> LabelRecord:
        if sample_id not in self.pool.pending:
            raise AnnotationError(f"id {sample_id!r} is not staged for annotation")
        sample = self.pool.all[sample_id]
        if sample.true_label is None:
            raise AnnotationError(f"id {sample_id!r} has no stored label to reveal")
        self.reads += 1
        return LabelRecord(sample_id=sample_id, hard=sample.true_label,
                           iteration_acquired=iteration)

    def label_batch(self, ids: Sequence[str], iteration: int = 0) -> list[LabelRecord]:
        return [self.label(i, iteration) for i in ids]


@dataclass
class AnnotatorProfile:
    """Simulated annotator: a row-stochastic confusion matrix plus a chance
    of emitting one extra distinct label."""

    id: str
    confusion_matrix: np.ndarray
    multi_label_rate: float = 0.0

    def __post_init__(self):
        self.confusion_matrix = np.asarray(self.confusion_matrix, dtype=np.float64)
        c = self.confusion_matrix.shape[0]
        if self.confusion_matrix.shape != (c, c):
            raise AnnotationError("confusion matrix must be square")
        if not np.allclose(self.confusion_matrix.sum(axis=1), 1.0, atol=1e-9):
            raise AnnotationError("confusion matrix rows must sum to 1")
        if not 0.0 <= self.multi_label_rate < 1.0:
            raise AnnotationError("multi_label_rate must be in [0, 1)")


def identity_annotators(n: int, class_count: int) -> list[AnnotatorProfile]:
    return [
        AnnotatorProfile(id=f"annotator{i}", confusion_matrix=np.eye(class_count))
        for i in range(n)
    ]


def simulate_votes(
    profiles: Sequence[AnnotatorProfile], true_label: int, seed: int
) -> tuple[tuple[int, ...], ...]:
    """One vote set per annotator, drawn from its confusion row at the truth.

    With probability multi_label_rate the annotator adds a second distinct
    label, drawn from the same confusion row renormalized without the
    first pick (uniform over the rest if that mass is zero).
    """
    rng = np.random.default_rng(seed)
    votes = []
    for profile in profiles:
        row = profile.confusion_matrix[true_label]
        c = row.shape[0]
        first = int(rng.choice(c, p=row))
        vote = [first]
        if profile.multi_label_rate > 0.0 and rng.random() < profile.multi_label_rate:
            rest = row.copy()
            rest[first] = 0.0
            total = rest.sum()
            if total > 0.0:
                vote.append(int(rng.choice(c, p=rest / total)))
            else:
                others = [j for j in range(c) if j != first]
                vote.append(int(others[rng.integers(len(others))]))
        votes.append(tuple(vote))
    return tuple(votes)


def simulated_records(
    profiles: Sequence[AnnotatorProfile],
    pool: Pool,
    ids: Sequence[str],
    seed: int,
    iteration: int = 0,
) -> list[LabelRecord]:
    """Soft label records for staged ids from the simulated annotator pool."""
    records = []
    for sample_id in sorted(ids):
        if sample_id not in pool.pending:
            raise AnnotationError(f"id {sample_id!r} is not staged for annotation")
        sample = pool.all[sample_id]
        if sample.true_label is None:
            raise AnnotationError(f"id {sample_id!r} has no stored label to simulate from")
        sub_seed = np.random.SeedSequence(seed, spawn_key=(abs(hash(sample_id)) % 2**31,))
        votes = simulate_votes(profiles, sample.true_label, np.random.default_rng(sub_seed).integers(2**31))
        records.append(
            LabelRecord(
                sample_id=sample_id,
                soft=aggregate_soft(votes, pool.class_count),
                votes=votes,
                annotator_ids=tuple(p.id for p in profiles),
                iteration_acquired=iteration,
            )
        )
    return records


@dataclass
class QueueEntry:
    sample_id: str
    payload: dict
    record: LabelRecord | None = None


class LabelQueue:
    """Pending-annotation queue bridging the loop and the HTTP service.

    The loop enqueues staged ids and blocks in :meth:`await_labels`;
    annotators post labels concurrently. One successful post finalizes a
    sample; replays with the same idempotency key return the first outcome
    without committing twice.
    """

    def __init__(self, class_count: int):
        self.class_count = class_count
        self._lock = threading.Lock()
        self._done = threading.Condition(self._lock)
        self._entries: dict[str, QueueEntry] = {}
        self._idempotency: dict[str, dict] = {}
        self.iteration = 0

    def enqueue(self, entries: dict[str, dict], iteration: int):
        with self._lock:
            self.iteration = iteration
            for sample_id, payload in entries.items():
                if sample_id in self._entries:
                    raise AnnotationError(f"id {sample_id!r} already queued")
                self._entries[sample_id] = QueueEntry(sample_id=sample_id, payload=payload)

    def open_entries(self) -> list[QueueEntry]:
        with self._lock:
            return [e for e in self._entries.values() if e.record is None]

    def post_label(
        self,
        sample_id: str,
        annotator_id: str,
        hard: int | None = None,
        votes: Sequence[Sequence[int]] | None = None,
        idempotency_key: str | None = None,
    ) -> dict:
        """Record one annotation. Returns {"status": "accepted"|"duplicate"}."""
        with self._lock:
            if idempotency_key is not None and idempotency_key in self._idempotency:
                return self._idempotency[idempotency_key]
            entry = self._entries.get(sample_id)
            if entry is None:
                raise AnnotationConflict(f"id {sample_id!r} is not awaiting annotation")
            if entry.record is not None:
                raise AnnotationConflict(f"id {sample_id!r} already labeled")
            if (hard is None) == (votes is None):
                raise AnnotationError("post exactly one of hard/votes")
            if hard is not None:
                if not 0 <= hard < self.class_count:
                    raise AnnotationError(
                        f"class index {hard} out of range [0, {self.class_count})"
                    )
                record = LabelRecord(
                    sample_id=sample_id,
                    hard=hard,
                    annotator_ids=(annotator_id,),
                    iteration_acquired=self.iteration,
                )
            else:
                votes = tuple(tuple(int(v) for v in vote_set) for vote_set in votes)
                record = LabelRecord(
                    sample_id=sample_id,
                    soft=aggregate_soft(votes, self.class_count),
                    votes=votes,
                    annotator_ids=(annotator_id,),
                    iteration_acquired=self.iteration,
                )
            entry.record = record
            result = {"status": "accepted", "sample_id": sample_id}
            if idempotency_key is not None:
                self._idempotency[idempotency_key] = result
            self._done.notify_all()
            return result

    def await_labels(self, timeout: float | None = None) -> list[LabelRecord]:
        """Block until every queued id is labeled; drain and return records.

        A timeout raises :class:`AnnotationTimeout` with the missing ids;
        nothing is drained, so the wait can resume.
        """
        with self._lock:
            def outstanding():
                return [i for i, e in self._entries.items() if e.record is None]

            missing = outstanding()
            if missing:
                finished = self._done.wait_for(lambda: not outstanding(), timeout=timeout)
                if not finished:
                    raise AnnotationTimeout(sorted(outstanding()))
            records = [e.record for e in self._entries.values()]
            self._entries.clear()
            return sorted(records, key=lambda r: r.sample_id)

    def state_dict(self) -> dict:
        with self._lock:
            return {
                "iteration": self.iteration,
                "open": sorted(i for i, e in self._entries.items() if e.record is None),
                "labeled": sorted(i for i, e in self._entries.items() if e.record is not None),
            }


def write_snapshot(path: str | Path, pool: Pool, extra: dict | None = None):
    """Persist the pool partition (and optional run metadata) as JSON."""
    snapshot = {"pool": pool.state_dict()}
    if extra:
        snapshot.update(extra)
    Path(path).write_text(json.dumps(snapshot, indent=2) + "\n")
