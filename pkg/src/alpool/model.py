"""Probabilistic classifier retrained at every acquisition round.

Two architectures: a plain linear softmax model (convex loss, used by the
optimization tests) and a one-hidden-layer tanh network whose hidden units
are dropped out at Monte-Carlo prediction time to approximate a posterior
over parameters. Training is full-batch gradient descent on cross-entropy
with analytic gradients and plateau early stopping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from alpool.core import LabelRecord

LOG_CLAMP = 1e-12

LINEAR = "linear"
ONE_HIDDEN = "one_hidden"


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the partial report."""

    def __init__(self, report: "TrainReport"):
        self.report = report
        super().__init__(f"training diverged after {report.epochs_run} epochs")


@dataclass
class TrainReport:
    """Outcome of one training call.

    ``gradient_steps`` counts per-sample gradient evaluations
    (epochs x batch size), the hardware-independent compute unit used by
    the budget/time trade-off properties.
    """

    epochs_run: int
    final_loss: float
    gradient_steps: int


@dataclass
class ClassifierState:
    """Parameters of the classifier; treat as frozen outside training."""

    architecture: str
    feature_dim: int
    class_count: int
    hidden_width: int
    dropout_rate: float
    params: dict[str, np.ndarray]

    def copy(self) -> "ClassifierState":
        return ClassifierState(
            architecture=self.architecture,
            feature_dim=self.feature_dim,
            class_count=self.class_count,
            hidden_width=self.hidden_width,
            dropout_rate=self.dropout_rate,
            params={k: v.copy() for k, v in self.params.items()},
        )


def init_classifier(
    feature_dim: int,
    class_count: int,
    architecture: str = ONE_HIDDEN,
    hidden_width: int = 64,
    dropout_rate: float = 0.3,
    seed: int = 0,
    weight_scale: float = 0.1,
) -> ClassifierState:
    rng = np.random.default_rng(seed)
    if architecture == LINEAR:
        params = {
            "W": rng.normal(size=(feature_dim, class_count)) * weight_scale,
            "b": np.zeros(class_count),
        }
        hidden_width = 0
        dropout_rate = 0.0
    elif architecture == ONE_HIDDEN:
        params = {
            "W1": rng.normal(size=(feature_dim, hidden_width)) * weight_scale,
            "b1": np.zeros(hidden_width),
            "W2": rng.normal(size=(hidden_width, class_count)) * weight_scale,
            "b2": np.zeros(class_count),
        }
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must be in [0, 1)")
    return ClassifierState(
        architecture=architecture,
        feature_dim=feature_dim,
        class_count=class_count,
        hidden_width=hidden_width,
        dropout_rate=dropout_rate,
        params=params,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(state: ClassifierState, X: np.ndarray, hidden_mask: np.ndarray | None = None):
    """Return (probs, hidden activations or None). ``hidden_mask`` applies dropout."""
    if state.architecture == LINEAR:
        logits = X @ state.params["W"] + state.params["b"]
        return softmax(logits), None
    hidden = np.tanh(X @ state.params["W1"] + state.params["b1"])
    if hidden_mask is not None:
        hidden = hidden * hidden_mask
    logits = hidden @ state.params["W2"] + state.params["b2"]
    return softmax(logits), hidden


def predict_proba(state: ClassifierState, features) -> np.ndarray:
    """Deterministic class probabilities for one feature vector (dropout off)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != state.feature_dim:
        raise ValueError(f"expected a {state.feature_dim}-d feature vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input features")
    probs, _ = _forward(state, x[None, :])
    return probs[0]


def predict_proba_batch(state: ClassifierState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input features")
    probs, _ = _forward(state, X)
    return probs


def targets_from_records(records: list[LabelRecord], class_count: int) -> np.ndarray:
    return np.stack([r.target_vector(class_count) for r in records])


def ce_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy -(1/k) sum_i sum_j y_ij ln p_ij, natural log.

    Probabilities are clamped at 1e-12 inside the log so a zero prediction
    against a positive target yields a large finite loss, never infinity.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and targets {y.shape} differ")
    return float(-(y * np.log(np.maximum(p, LOG_CLAMP))).sum() / p.shape[0])


def ce_loss_grad(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of :func:`ce_loss` with respect to the predictions."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    grad = np.zeros_like(p)
    active = p > LOG_CLAMP
    grad[active] = -y[active] / p[active] / p.shape[0]
    return grad


def loss_and_param_grads(state: ClassifierState, X: np.ndarray, Y: np.ndarray):
    """Cross-entropy and its analytic gradient for every parameter."""
    n = X.shape[0]
    probs, hidden = _forward(state, X)
    loss = ce_loss(probs, Y)
    dlogits = (probs - Y) / n
    grads: dict[str, np.ndarray] = {}
    if state.architecture == LINEAR:
        grads["W"] = X.T @ dlogits
        grads["b"] = dlogits.sum(axis=0)
    else:
        grads["W2"] = hidden.T @ dlogits
        grads["b2"] = dlogits.sum(axis=0)
        dhidden = dlogits @ state.params["W2"].T
        dz1 = dhidden * (1.0 - hidden**2)
        grads["W1"] = X.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def train(
    state: ClassifierState,
    X: np.ndarray,
    Y: np.ndarray,
    learning_rate: float = 0.1,
    epochs: int = 100,
    patience: int = 20,
    min_improvement: float = 1e-9,
):
    """Full-batch gradient descent from ``state`` (warm start).

    Stops early when the training loss has not improved by
    ``min_improvement`` for ``patience`` consecutive epochs. Returns
    (new state, TrainReport); the input state is not mutated.
    """
    if X.shape[0] < 1:
        raise ValueError("training requires at least one labeled sample")
    current = state.copy()
    n = X.shape[0]
    stale = 0
    best = ce_loss(predict_proba_batch(current, X), Y)
    epochs_run = 0
    for _ in range(epochs):
        loss, grads = loss_and_param_grads(current, X, Y)
        if not np.isfinite(loss):
            raise TrainingDiverged(TrainReport(epochs_run, float(loss), epochs_run * n))
        for name, g in grads.items():
            current.params[name] -= learning_rate * g
        epochs_run += 1
        if loss < best - min_improvement:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    final = ce_loss(predict_proba_batch(current, X), Y)
    if not np.isfinite(final):
        raise TrainingDiverged(TrainReport(epochs_run, float(final), epochs_run * n))
    return current, TrainReport(epochs_run=epochs_run, final_loss=final, gradient_steps=epochs_run * n)


def mc_dropout_predict(state: ClassifierState, features, T: int, seed: int) -> np.ndarray:
    """T stochastic forward passes with fresh dropout masks; (T, c) array.

    Deterministic given the seed. With dropout_rate 0 (or the linear
    architecture) every row is identical.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    rng = np.random.default_rng(seed)
    rows = []
    keep = 1.0 - state.dropout_rate
    for _ in range(T):
        if state.architecture == ONE_HIDDEN and state.dropout_rate > 0.0:
            mask = (rng.random(state.hidden_width) < keep) / keep
        else:
            mask = None
        probs, _ = _forward(state, x, hidden_mask=mask)
        rows.append(probs[0])
    return np.stack(rows)


def mc_dropout_predict_pool(
    state: ClassifierState, X: np.ndarray, T: int, seed: int
) -> np.ndarray:
    """(n, T, c) MC-dropout predictions; all samples share the t-th mask."""
    if T < 1:
        raise ValueError("T must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    keep = 1.0 - state.dropout_rate
    out = np.empty((X.shape[0], T, state.class_count))
    for t in range(T):
        if state.architecture == ONE_HIDDEN and state.dropout_rate > 0.0:
            mask = (rng.random(state.hidden_width) < keep) / keep
        else:
            mask = None
        probs, _ = _forward(state, X, hidden_mask=mask)
        out[:, t, :] = probs
    return out


def save_checkpoint(state: ClassifierState, directory: str | Path):
    """Write a checkpoint: small JSON header plus one AFTR block per parameter."""
    from alpool.dataio import write_features

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "architecture": state.architecture,
        "feature_dim": state.feature_dim,
        "class_count": state.class_count,
        "hidden_width": state.hidden_width,
        "dropout_rate": state.dropout_rate,
        "params": {},
    }
    for name, value in state.params.items():
        matrix = value if value.ndim == 2 else value[None, :]
        header["params"][name] = {"file": f"{name}.f32", "vector": value.ndim == 1}
        write_features(matrix, out / f"{name}.f32")
    (out / "checkpoint.json").write_text(json.dumps(header, indent=2) + "\n")


def load_checkpoint(directory: str | Path) -> ClassifierState:
    from alpool.dataio import read_features

    root = Path(directory)
    header = json.loads((root / "checkpoint.json").read_text())
    params = {}
    for name, meta in header["params"].items():
        matrix = read_features(root / meta["file"]).astype(np.float64)
        params[name] = matrix[0] if meta["vector"] else matrix
    return ClassifierState(
        architecture=header["architecture"],
        feature_dim=header["feature_dim"],
        class_count=header["class_count"],
        hidden_width=header["hidden_width"],
        dropout_rate=header["dropout_rate"],
        params=params,
    )
