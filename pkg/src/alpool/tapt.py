"""Desk-scale self-supervised adaptation pretraining.

Flat feature vectors are reshaped into short frame sequences. Training
masks a fraction of frames, quantizes the unmasked latents against a
learned codebook, and minimizes a contrastive alignment term between
context vectors and their own quantized latents plus a token
reconstruction term at the masked positions. The quantizer is handled
straight-through: gradients reach the context path and the codewords,
never the argmin.

The trained encoder (a per-frame linear map) replaces raw features for
downstream training; it never sees a label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from alpool.model import softmax

LOG_CLAMP = 1e-12


class PretrainDiverged(RuntimeError):
    pass


@dataclass
class TaptState:
    """Encoder, context transform, codebook and mask embedding."""

    frame_dim: int
    hidden_dim: int
    n_frames: int
    params: dict[str, np.ndarray]
    mask_ratio: float = 0.15
    temperature: float = 0.1

    def copy(self) -> "TaptState":
        return TaptState(
            frame_dim=self.frame_dim,
            hidden_dim=self.hidden_dim,
            n_frames=self.n_frames,
            params={k: v.copy() for k, v in self.params.items()},
            mask_ratio=self.mask_ratio,
            temperature=self.temperature,
        )


def init_tapt(
    feature_dim: int,
    n_frames: int = 8,
    hidden_dim: int | None = None,
    codebook_size: int = 16,
    mask_ratio: float = 0.15,
    temperature: float = 0.1,
    seed: int = 0,
) -> TaptState:
    """Identity-initialized encoder and context transform, seeded codebook."""
    if feature_dim % n_frames != 0:
        raise ValueError(f"feature_dim {feature_dim} not divisible by {n_frames} frames")
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must be in (0, 1)")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    frame_dim = feature_dim // n_frames
    h = hidden_dim if hidden_dim is not None else frame_dim
    rng = np.random.default_rng(seed)
    params = {
        "W_e": np.eye(frame_dim, h),
        "b_e": np.zeros(h),
        "W_c": np.eye(h),
        # O(1) bias keeps masked-position context vectors (zero mask vector
        # through a linear map) away from zero norm, where cosine similarity
        # is undefined and its gradient blows up
        "b_c": rng.normal(size=h) * 0.5,
        "codebook": rng.normal(size=(codebook_size, h)),
        "mask_vec": np.zeros(frame_dim),
    }
    return TaptState(
        frame_dim=frame_dim,
        hidden_dim=h,
        n_frames=n_frames,
        params=params,
        mask_ratio=mask_ratio,
        temperature=temperature,
    )


def frames_of(features: np.ndarray, n_frames: int) -> np.ndarray:
    """Reshape a flat d-vector into (n_frames, d / n_frames)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] % n_frames != 0:
        raise ValueError(f"feature dim {x.shape[-1]} not divisible by {n_frames}")
    return x.reshape(*x.shape[:-1], n_frames, x.shape[-1] // n_frames)


def mask_frames(seq: np.ndarray, mask_ratio: float, seed: int, mask_vector=None):
    """Replace exactly max(1, floor(n * mask_ratio)) frames with the mask vector.

    Returns (masked sequence, sorted masked index array); deterministic
    per seed.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("sequence must be a non-empty (n, frame_dim) array")
    n = seq.shape[0]
    n_masked = max(1, int(np.floor(n * mask_ratio)))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=n_masked, replace=False))
    masked = seq.copy()
    masked[idx] = np.zeros(seq.shape[1]) if mask_vector is None else np.asarray(mask_vector)
    return masked, idx


def quantize(embedding: np.ndarray, codebook: np.ndarray):
    """Index and value of the Euclidean-nearest codeword; ties to the lowest index."""
    e = np.asarray(embedding, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite embedding")
    d2 = ((codebook - e) ** 2).sum(axis=1)
    idx = int(d2.argmin())
    return idx, codebook[idx].copy()


def _cosine_matrix(Zc: np.ndarray, Zq: np.ndarray):
    nc = np.linalg.norm(Zc, axis=1)
    nq = np.linalg.norm(Zq, axis=1)
    if np.any(nc == 0.0) or np.any(nq == 0.0):
        raise ValueError("zero-norm vector: cosine similarity undefined")
    return (Zc @ Zq.T) / np.outer(nc, nq), nc, nq


def contrastive_loss(Zc, Zq, temperature: float) -> float:
    """Alignment loss between context vectors and quantized latents.

    Position i's positive is its own quantized vector; every quantized
    vector in the batch (including the positive) sits in the denominator.
    Each per-position term is provably >= 0 and is asserted so.
    """
    Zc = np.atleast_2d(np.asarray(Zc, dtype=np.float64))
    Zq = np.atleast_2d(np.asarray(Zq, dtype=np.float64))
    if Zc.shape != Zq.shape:
        raise ValueError("context and quantized batches must match in shape")
    S, _, _ = _cosine_matrix(Zc, Zq)
    if not np.all(np.isfinite(S)):
        raise ValueError("non-finite similarity input")
    scaled = S / temperature
    logsum = np.log(np.exp(scaled - scaled.max(axis=1, keepdims=True)).sum(axis=1)) + scaled.max(axis=1)
    terms = logsum - np.diag(scaled)
    assert np.all(terms >= -1e-12), "contrastive term below zero"
    return float(terms.sum())


def contrastive_loss_and_grads(Zc, Zq, temperature: float):
    """Loss plus analytic gradients with respect to Zc and Zq."""
    Zc = np.atleast_2d(np.asarray(Zc, dtype=np.float64))
    Zq = np.atleast_2d(np.asarray(Zq, dtype=np.float64))
    S, nc, nq = _cosine_matrix(Zc, Zq)
    n = S.shape[0]
    scaled = S / temperature
    P = softmax(scaled)
    loss = contrastive_loss(Zc, Zq, temperature)
    dS = (P - np.eye(n)) / temperature
    unit_c = Zc / nc[:, None]
    unit_q = Zq / nq[:, None]
    dZc = np.zeros_like(Zc)
    dZq = np.zeros_like(Zq)
    for i in range(n):
        # d sim(c_i, q_j) / d c_i = (q_j_hat - S_ij * c_i_hat) / ||c_i||
        dZc[i] = (dS[i][:, None] * (unit_q - S[i][:, None] * unit_c[i])).sum(axis=0) / nc[i]
    for j in range(n):
        dZq[j] = (dS[:, j][:, None] * (unit_c - S[:, j][:, None] * unit_q[j])).sum(axis=0) / nq[j]
    return loss, dZc, dZq


def reconstruction_loss(true_tokens, predicted_probs) -> float:
    """Mean negative log-probability of the true token at masked positions."""
    tokens = np.asarray(true_tokens, dtype=np.int64)
    probs = np.atleast_2d(np.asarray(predicted_probs, dtype=np.float64))
    if tokens.size == 0:
        raise ValueError("need at least one masked position")
    if tokens.shape[0] != probs.shape[0]:
        raise ValueError("token and prediction counts differ")
    picked = probs[np.arange(tokens.shape[0]), tokens]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())


def reconstruction_loss_grad(true_tokens, predicted_probs) -> np.ndarray:
    """Gradient of :func:`reconstruction_loss` with respect to the probabilities."""
    tokens = np.asarray(true_tokens, dtype=np.int64)
    probs = np.atleast_2d(np.asarray(predicted_probs, dtype=np.float64))
    grad = np.zeros_like(probs)
    rows = np.arange(tokens.shape[0])
    picked = probs[rows, tokens]
    active = picked > LOG_CLAMP
    grad[rows[active], tokens[active]] = -1.0 / picked[active] / tokens.shape[0]
    return grad


def tapt_loss(contrastive: float, reconstruction: float) -> float:
    """Unweighted sum of the two pretraining terms."""
    return contrastive + reconstruction


def _forward_sample(state: TaptState, frames: np.ndarray, masked_idx: np.ndarray):
    """One sample's pretext forward pass; returns intermediates for backprop."""
    p = state.params
    latents = frames @ p["W_e"] + p["b_e"]  # unmasked path feeding the quantizer
    corrupted = frames.copy()
    corrupted[masked_idx] = p["mask_vec"]
    latents_masked = corrupted @ p["W_e"] + p["b_e"]
    context = latents_masked @ p["W_c"] + p["b_c"]
    tokens = np.array([quantize(u, p["codebook"])[0] for u in latents])
    z_q = p["codebook"][tokens]
    recon_logits = context[masked_idx] @ p["codebook"].T
    recon_probs = softmax(recon_logits)
    return {
        "corrupted": corrupted,
        "latents_masked": latents_masked,
        "context": context,
        "tokens": tokens,
        "z_q": z_q,
        "recon_probs": recon_probs,
    }


def tapt_loss_and_grads(state: TaptState, frame_batch: np.ndarray, masked_sets: list[np.ndarray]):
    """Mean pretraining loss over a batch and analytic parameter gradients."""
    p = state.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    total = 0.0
    n_samples = frame_batch.shape[0]
    for s in range(n_samples):
        frames = frame_batch[s]
        masked_idx = masked_sets[s]
        f = _forward_sample(state, frames, masked_idx)
        l_cl, d_context_cl, d_zq = contrastive_loss_and_grads(
            f["context"], f["z_q"], state.temperature
        )
        l_rl = reconstruction_loss(f["tokens"][masked_idx], f["recon_probs"])
        total += tapt_loss(l_cl, l_rl)

        d_context = d_context_cl
        # reconstruction head: softmax cross-entropy over codewords
        n_m = masked_idx.shape[0]
        one_hot = np.zeros_like(f["recon_probs"])
        one_hot[np.arange(n_m), f["tokens"][masked_idx]] = 1.0
        d_logits = (f["recon_probs"] - one_hot) / n_m
        d_context[masked_idx] += d_logits @ p["codebook"]
        grads["codebook"] += d_logits.T @ f["context"][masked_idx]
        # straight-through: quantized-latent gradient lands on the codewords
        np.add.at(grads["codebook"], f["tokens"], d_zq)

        d_latents_masked = d_context @ p["W_c"].T
        grads["W_c"] += f["latents_masked"].T @ d_context
        grads["b_c"] += d_context.sum(axis=0)
        grads["W_e"] += f["corrupted"].T @ d_latents_masked
        grads["b_e"] += d_latents_masked.sum(axis=0)
        grads["mask_vec"] += (d_latents_masked[masked_idx] @ p["W_e"].T).sum(axis=0)
    for k in grads:
        grads[k] /= n_samples
    return total / n_samples, grads


def pretrain(
    features: np.ndarray,
    epochs: int,
    seed: int,
    n_frames: int = 8,
    hidden_dim: int | None = None,
    codebook_size: int = 16,
    mask_ratio: float = 0.15,
    temperature: float = 0.1,
    learning_rate: float = 0.02,
    clip_norm: float = 5.0,
) -> TaptState:
    """Gradient descent on the combined pretext loss over an unlabeled pool.

    Takes a bare (N, d) feature matrix: labels are not part of the
    interface. Per-sample mask positions are drawn once from the seeded
    stream so the optimized objective is fixed; everything is
    deterministic per seed. Gradients are clipped to ``clip_norm`` (global
    norm): the sharp low-temperature cosine term otherwise blows small
    context norms up into divergence.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("features must be a non-empty (N, d) matrix")
    state = init_tapt(
        X.shape[1],
        n_frames=n_frames,
        hidden_dim=hidden_dim,
        codebook_size=codebook_size,
        mask_ratio=mask_ratio,
        temperature=temperature,
        seed=seed,
    )
    frame_batch = frames_of(X, n_frames)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    # seed the codebook with encoded data frames (prototype init); jitter
    # keeps rows distinct and non-zero
    all_frames = frame_batch.reshape(-1, state.frame_dim)
    latents = all_frames @ state.params["W_e"] + state.params["b_e"]
    pick = rng.choice(latents.shape[0], size=codebook_size,
                      replace=latents.shape[0] < codebook_size)
    state.params["codebook"] = latents[pick] + rng.normal(size=(codebook_size, state.hidden_dim)) * 0.01
    n = frame_batch.shape[1]
    n_masked = max(1, int(np.floor(n * mask_ratio)))
    masked_sets = [
        np.sort(rng.choice(n, size=n_masked, replace=False)) for _ in range(X.shape[0])
    ]
    for _ in range(epochs):
        try:
            loss, grads = tapt_loss_and_grads(state, frame_batch, masked_sets)
        except ValueError as err:
            raise PretrainDiverged(str(err)) from err
        if not np.isfinite(loss):
            raise PretrainDiverged(f"pretraining loss became {loss!r}")
        total_norm = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        scale = min(1.0, clip_norm / max(total_norm, 1e-12))
        for k, g in grads.items():
            state.params[k] -= learning_rate * scale * g
    return state


def save_tapt(state: TaptState, directory):
    """Checkpoint the pretraining state: JSON header plus AFTR parameter blocks."""
    import json
    from pathlib import Path

    from alpool.dataio import write_features

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "frame_dim": state.frame_dim,
        "hidden_dim": state.hidden_dim,
        "n_frames": state.n_frames,
        "mask_ratio": state.mask_ratio,
        "temperature": state.temperature,
        "params": {},
    }
    for name, value in state.params.items():
        matrix = value if value.ndim == 2 else value[None, :]
        header["params"][name] = {"file": f"{name}.f32", "vector": value.ndim == 1}
        write_features(matrix, out / f"{name}.f32")
    (out / "tapt.json").write_text(json.dumps(header, indent=2) + "\n")


def load_tapt(directory) -> TaptState:
    import json
    from pathlib import Path

    from alpool.dataio import read_features

    root = Path(directory)
    header = json.loads((root / "tapt.json").read_text())
    params = {}
    for name, meta in header["params"].items():
        matrix = read_features(root / meta["file"]).astype(np.float64)
        params[name] = matrix[0] if meta["vector"] else matrix
    return TaptState(
        frame_dim=header["frame_dim"],
        hidden_dim=header["hidden_dim"],
        n_frames=header["n_frames"],
        params=params,
        mask_ratio=header["mask_ratio"],
        temperature=header["temperature"],
    )


def encode(state: TaptState, features: np.ndarray) -> np.ndarray:
    """Downstream feature map: the unmasked context path, flattened.

    Context vectors (not raw latents) are what the pretext losses shape,
    so they are what replaces raw features for the classifier.
    """
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    frames = frames_of(np.atleast_2d(X), state.n_frames)
    latents = frames @ state.params["W_e"] + state.params["b_e"]
    context = latents @ state.params["W_c"] + state.params["b_c"]
    flat = context.reshape(context.shape[0], -1)
    return flat[0] if single else flat
