"""The experiment orchestrator: init, acquire, annotate, retrain, evaluate.

One call to :func:`run_experiment` executes the full budgeted loop on a
pool, producing a :class:`RunReport` with one record per training round.
Oracle-mode runs are bit-deterministic for a fixed config seed: every
random draw comes from a substream keyed on (seed, stage tag, round).
Wall-clock timings are collected but live outside the canonical report
serialization, which must be reproducible byte-for-byte.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from alpool import acquisition, annotate, initializers, model, tapt
from alpool.core import ExperimentConfig, Pool, split_budget

# substream tags
_TAPT, _INIT, _MODEL, _RANDOM_AC, _ALPS, _MC, _ANNOTATE = range(1, 8)


def sub_seed(seed: int, *key: int) -> int:
    """Stable derived seed for a named stage (and optional round)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class IterationRecord:
    iteration: int
    labeled: int
    ua: float
    wa: float
    train_loss: float
    gradient_steps: int
    wall_seconds: float


@dataclass
class RunReport:
    """Per-round learning-curve data plus the final confusion matrix."""

    config: dict
    seed: int
    class_count: int
    records: list[IterationRecord] = field(default_factory=list)
    confusion: list[list[int]] = field(default_factory=list)
    oracle_reads: int | None = None

    @property
    def total_gradient_steps(self) -> int:
        return sum(r.gradient_steps for r in self.records)

    def final(self) -> IterationRecord:
        return self.records[-1]

    def canonical_dict(self) -> dict:
        """Deterministic content only: wall-clock values are excluded."""
        return {
            "config": self.config,
            "seed": self.seed,
            "class_count": self.class_count,
            "oracle_reads": self.oracle_reads,
            "total_gradient_steps": self.total_gradient_steps,
            "records": [
                {
                    "iteration": r.iteration,
                    "labeled": r.labeled,
                    "ua": r.ua,
                    "wa": r.wa,
                    "train_loss": r.train_loss,
                    "gradient_steps": r.gradient_steps,
                }
                for r in self.records
            ],
            "confusion": self.confusion,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical_dict(), sort_keys=True, indent=2).encode()


def evaluate(state: model.ClassifierState, eval_features, eval_labels):
    """(UA, WA, confusion matrix) on a held-out split.

    WA is plain accuracy; UA is the unweighted mean of per-class recalls,
    computed over the classes that actually appear in the split.
    """
    X = np.asarray(eval_features, dtype=np.float64)
    y = np.asarray(eval_labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty evaluation split")
    predicted = model.predict_proba_batch(state, X).argmax(axis=1)
    c = state.class_count
    confusion = np.zeros((c, c), dtype=np.int64)
    for truth, pred in zip(y, predicted):
        confusion[truth, pred] += 1
    wa = float(np.trace(confusion) / confusion.sum())
    recalls = []
    for j in range(c):
        row_total = confusion[j].sum()
        if row_total > 0:
            recalls.append(confusion[j, j] / row_total)
    ua = float(np.mean(recalls))
    return ua, wa, confusion.tolist()


def default_annotator_pool(class_count: int) -> list[annotate.AnnotatorProfile]:
    """Three mildly noisy annotators: 80% faithful, rest spread uniformly."""
    c = class_count
    matrix = np.full((c, c), 0.2 / (c - 1))
    np.fill_diagonal(matrix, 0.8)
    return [
        annotate.AnnotatorProfile(id=f"annotator{i}", confusion_matrix=matrix,
                                  multi_label_rate=0.1)
        for i in range(3)
    ]


def _feature_summary(features: np.ndarray) -> dict:
    head = [round(float(v), 4) for v in features[:4]]
    return {
        "dims": int(features.shape[0]),
        "min": round(float(features.min()), 4),
        "max": round(float(features.max()), 4),
        "mean": round(float(features.mean()), 4),
        "head": head,
    }


class ExperimentRunner:
    """Holds the mutable run state so the service can observe progress."""

    def __init__(
        self,
        config: ExperimentConfig,
        pool: Pool,
        eval_features,
        eval_labels,
        class_names: list[str] | None = None,
        annotators: list[annotate.AnnotatorProfile] | None = None,
        queue: annotate.LabelQueue | None = None,
        snapshot_path=None,
        label_timeout: float | None = None,
    ):
        config.validate(pool_size=len(pool))
        if config.annotator_mode == "human" and queue is None:
            raise ValueError("human mode needs a LabelQueue")
        self.config = config
        self.pool = pool
        self.queue = queue
        self.snapshot_path = snapshot_path
        self.label_timeout = label_timeout
        self.class_names = class_names or [f"class{j}" for j in range(pool.class_count)]
        self.annotators = annotators
        self.oracle = annotate.Oracle(pool)
        self.report = RunReport(
            config=config.to_dict(), seed=config.seed, class_count=pool.class_count
        )
        self.finished = False
        self._eval_raw = (np.asarray(eval_features, dtype=np.float64),
                          np.asarray(eval_labels, dtype=np.int64))
        self.tapt_state: tapt.TaptState | None = None
        self.classifier: model.ClassifierState | None = None
        self._last_eval: tuple[float, float] | None = None

    # -- feature map -------------------------------------------------------

    def _prepare_features(self):
        config = self.config
        pool_ids = sorted(self.pool.all)
        raw = self.pool.features_of(pool_ids)
        if config.tapt_enabled:
            self.tapt_state = tapt.pretrain(
                raw,
                epochs=config.tapt_epochs,
                seed=sub_seed(config.seed, _TAPT),
                n_frames=config.tapt_frames,
                hidden_dim=config.tapt_hidden,
                codebook_size=config.tapt_codebook,
                mask_ratio=config.tapt_mask_ratio,
            )
            encoded = tapt.encode(self.tapt_state, raw)
            eval_X = tapt.encode(self.tapt_state, self._eval_raw[0])
        else:
            encoded = raw
            eval_X = self._eval_raw[0]
        self._features = {i: encoded[n] for n, i in enumerate(pool_ids)}
        self._eval = (eval_X, self._eval_raw[1])
        self.feature_dim = encoded.shape[1]

    def _X(self, ids: list[str]) -> np.ndarray:
        return np.stack([self._features[i] for i in ids])

    # -- annotation --------------------------------------------------------

    def _profiles(self) -> list[annotate.AnnotatorProfile]:
        return self.annotators or default_annotator_pool(self.pool.class_count)

    def _snapshot(self, iteration: int):
        if self.snapshot_path is None:
            return
        extra = {"iteration": iteration, "finished": self.finished}
        if self.queue is not None:
            extra["queue"] = self.queue.state_dict()
        annotate.write_snapshot(self.snapshot_path, self.pool, extra=extra)

    def _annotate(self, ids: list[str], iteration: int):
        config = self.config
        if config.annotator_mode == "oracle":
            records = self.oracle.label_batch(sorted(ids), iteration)
        elif config.annotator_mode == "simulated_multi":
            records = annotate.simulated_records(
                self._profiles(), self.pool, ids,
                seed=sub_seed(config.seed, _ANNOTATE, iteration), iteration=iteration,
            )
        else:
            entries = {}
            for sample_id in sorted(ids):
                sample = self.pool.all[sample_id]
                entries[sample_id] = {
                    "sample_id": sample_id,
                    "feature_summary": _feature_summary(sample.features),
                    "audio_ref": sample.audio_ref,
                    "class_names": self.class_names,
                    "iteration": iteration,
                }
            self.queue.enqueue(entries, iteration)
            self._snapshot(iteration)  # pending set persisted before the wait
            try:
                records = self.queue.await_labels(timeout=self.label_timeout)
            except annotate.AnnotationTimeout:
                self._snapshot(iteration)  # paused, resumable; nothing committed
                raise
        self.pool.commit_labels(records)
        self.pool.iteration = iteration
        self._snapshot(iteration)

    # -- training / evaluation ---------------------------------------------

    def _train(self, warm: model.ClassifierState | None):
        config = self.config
        labeled = self.pool.labeled_ids()
        X = self._X(labeled)
        Y = model.targets_from_records(
            [self.pool.labeled[i] for i in labeled], self.pool.class_count
        )
        if warm is None or not config.warm_start:
            warm = model.init_classifier(
                self.feature_dim,
                self.pool.class_count,
                architecture=config.architecture,
                hidden_width=config.hidden_width,
                dropout_rate=config.dropout_rate,
                seed=sub_seed(config.seed, _MODEL),
            )
        return model.train(
            warm, X, Y,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            patience=config.patience,
        )

    def _record(self, iteration: int, report: model.TrainReport, started: float):
        ua, wa, confusion = evaluate(self.classifier, *self._eval)
        self._last_eval = (ua, wa)
        self.report.records.append(
            IterationRecord(
                iteration=iteration,
                labeled=len(self.pool.labeled),
                ua=ua,
                wa=wa,
                train_loss=report.final_loss,
                gradient_steps=report.gradient_steps,
                wall_seconds=time.perf_counter() - started,
            )
        )
        self.report.confusion = confusion

    # -- acquisition --------------------------------------------------------

    def _select(self, k: int, iteration: int) -> list[str]:
        config = self.config
        candidates = self.pool.unlabeled_ids()
        k = min(k, len(candidates))
        if config.strategy == "random":
            rng = np.random.default_rng(sub_seed(config.seed, _RANDOM_AC, iteration))
            picked = rng.choice(len(candidates), size=k, replace=False)
            return [candidates[i] for i in picked]
        if config.strategy == "alps":
            return acquisition.alps_select(
                candidates, self._X(candidates), k,
                seed=sub_seed(config.seed, _ALPS, iteration), kmax=config.kmax,
            )
        if config.strategy == "batchbald":
            mc = model.mc_dropout_predict_pool(
                self.classifier, self._X(candidates), T=config.mc_samples,
                seed=sub_seed(config.seed, _MC, iteration),
            )
            return acquisition.batchbald_select(
                candidates, mc, k, seed=sub_seed(config.seed, _MC, iteration)
            )
        probs = model.predict_proba_batch(self.classifier, self._X(candidates))
        if config.strategy in acquisition.MULTI_ANNOTATOR:
            confusions = [p.confusion_matrix for p in self._profiles()]
            logits = acquisition.annotator_logits_from_model(probs, confusions)
            return acquisition.rank_multi_annotator(
                config.strategy, candidates, logits, k,
                votes=logits.argmax(axis=2), mix_reduce=config.mix_reduce,
            )
        return acquisition.rank_pointwise(config.strategy, candidates, probs, k)

    # -- the loop ------------------------------------------------------------

    def run(self) -> RunReport:
        try:
            return self._run()
        except Exception:
            # leave a resumable snapshot behind on any abort; never let a
            # failing snapshot write mask the original error
            try:
                self._snapshot(self.pool.iteration)
            except OSError:
                pass
            raise

    def _run(self) -> RunReport:
        config = self.config
        self._prepare_features()

        started = time.perf_counter()
        init_kwargs = {}
        if config.initializer == "kmeans":
            init_kwargs["kmax"] = config.kmax
        elif config.initializer in ("dacs", "bmal"):
            init_kwargs["k_nn"] = min(config.knn, len(self.pool) - 1)
        init_ids = initializers.run_initializer(
            config.initializer, self.pool, config.init_fraction,
            seed=sub_seed(config.seed, _INIT), **init_kwargs,
        )
        self.pool.stage_query(init_ids)
        self._annotate(init_ids, iteration=0)
        self.classifier, train_report = self._train(None)
        self._record(0, train_report, started)

        k = split_budget(config.budget, config.iterations)
        for i in range(1, config.iterations + 1):
            if not self.pool.unlabeled:
                break
            started = time.perf_counter()
            picked = self._select(k, i)
            self.pool.stage_query(picked)
            self._annotate(picked, iteration=i)
            warm = self.classifier if config.warm_start else None
            self.classifier, train_report = self._train(warm)
            self._record(i, train_report, started)
            if len(picked) < k:
                break  # pool exhausted early
        self.finished = True
        self.report.oracle_reads = self.oracle.reads
        self._snapshot(self.pool.iteration)
        return self.report

    # -- progress view (service) ---------------------------------------------

    def progress(self) -> dict:
        done = self.finished
        payload = {
            "iteration": self.pool.iteration,
            "labeled": len(self.pool.labeled),
            "pending": len(self.pool.pending),
            "unlabeled": len(self.pool.unlabeled),
            "budget": self.config.budget,
            "class_count": self.pool.class_count,
            "class_names": self.class_names,
            "terminal": done,
            "ua": self._last_eval[0] if self._last_eval else None,
            "wa": self._last_eval[1] if self._last_eval else None,
        }
        return payload


def run_experiment(
    config: ExperimentConfig,
    pool: Pool,
    eval_features,
    eval_labels,
    **kwargs,
) -> RunReport:
    """Execute the full loop; see :class:`ExperimentRunner` for knobs."""
    return ExperimentRunner(config, pool, eval_features, eval_labels, **kwargs).run()
