"""Pretraining losses, masking, quantization, and analytic gradients."""

import math

import numpy as np
import pytest

from alpool.tapt import (
    contrastive_loss,
    contrastive_loss_and_grads,
    encode,
    frames_of,
    init_tapt,
    mask_frames,
    pretrain,
    quantize,
    reconstruction_loss,
    reconstruction_loss_grad,
    tapt_loss,
    tapt_loss_and_grads,
)


class TestMasking:
    def test_fifteen_percent_of_twenty_is_three(self):
        seq = np.ones((20, 2))
        _, idx = mask_frames(seq, 0.15, seed=0)
        assert len(idx) == 3

    def test_single_frame_clamps_to_one(self):
        seq = np.ones((1, 4))
        masked, idx = mask_frames(seq, 0.15, seed=0)
        assert list(idx) == [0]
        np.testing.assert_array_equal(masked[0], np.zeros(4))

    def test_same_seed_same_indices(self):
        seq = np.random.default_rng(0).normal(size=(30, 3))
        _, a = mask_frames(seq, 0.2, seed=9)
        _, b = mask_frames(seq, 0.2, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_mask_vector_substituted(self):
        seq = np.ones((10, 2))
        masked, idx = mask_frames(seq, 0.3, seed=1, mask_vector=[5.0, -5.0])
        for i in idx:
            np.testing.assert_array_equal(masked[i], [5.0, -5.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mask_frames(np.zeros((0, 2)), 0.15, seed=0)


class TestQuantize:
    def test_exact_codeword(self):
        codebook = np.arange(10.0).reshape(5, 2)
        idx, z_q = quantize(codebook[3], codebook)
        assert idx == 3
        np.testing.assert_array_equal(z_q, codebook[3])

    def test_tie_goes_to_lower_index(self):
        codebook = np.array([[5.0, 5.0], [0.0, 0.0], [2.0, 0.0]])
        idx, _ = quantize([1.0, 0.0], codebook)  # equidistant to rows 1 and 2
        assert idx == 1

    def test_distance_arithmetic(self):
        codebook = np.array([[0.0, 0.0], [1.0, 1.0]])
        idx, z_q = quantize([0.9, 0.9], codebook)
        assert idx == 1
        np.testing.assert_array_equal(z_q, [1.0, 1.0])


class TestContrastiveLoss:
    def test_single_position_is_zero(self):
        z = np.array([[0.3, 0.7]])
        assert contrastive_loss(z, z, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pairs_closed_form(self):
        Zc = np.eye(2)
        Zq = np.eye(2)
        expected = 2.0 * math.log(1.0 + math.exp(-1.0 / 0.1))
        assert contrastive_loss(Zc, Zq, 0.1) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(9.08e-5, rel=1e-2)

    def test_shrinking_temperature_decreases_loss(self):
        Zc = np.eye(2)
        Zq = np.eye(2)
        losses = [contrastive_loss(Zc, Zq, t) for t in (1.0, 0.5, 0.1)]
        assert losses[0] > losses[1] > losses[2]

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            contrastive_loss(np.zeros((1, 2)), np.ones((1, 2)), 0.1)

    def test_every_term_nonnegative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n, h = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            Zc = rng.normal(size=(n, h))
            Zq = rng.normal(size=(n, h))
            assert contrastive_loss(Zc, Zq, 0.5) >= 0.0

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(1)
        h_step = 1e-5
        for trial in range(25):
            n, h = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            Zc = rng.normal(size=(n, h)) + 0.1
            Zq = rng.normal(size=(n, h)) + 0.1
            kappa = float(rng.uniform(0.2, 1.0))
            _, dZc, dZq = contrastive_loss_and_grads(Zc, Zq, kappa)
            for target, analytic in ((Zc, dZc), (Zq, dZq)):
                numeric = np.zeros_like(target)
                it = np.nditer(target, flags=["multi_index"])
                while not it.finished:
                    ij = it.multi_index
                    orig = target[ij]
                    target[ij] = orig + h_step
                    up = contrastive_loss(Zc, Zq, kappa)
                    target[ij] = orig - h_step
                    down = contrastive_loss(Zc, Zq, kappa)
                    target[ij] = orig
                    numeric[ij] = (up - down) / (2 * h_step)
                    it.iternext()
                err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
                assert err < 1e-4


class TestReconstructionLoss:
    def test_perfect_predictions_zero(self):
        probs = np.eye(4)[[2, 0, 1]]
        assert reconstruction_loss([2, 0, 1], probs) == pytest.approx(0.0, abs=1e-10)

    def test_uniform_over_eight(self):
        probs = np.full((5, 8), 1 / 8)
        value = reconstruction_loss([0, 1, 2, 3, 4], probs)
        assert value == pytest.approx(math.log(8), rel=1e-12)
        assert value == pytest.approx(2.079442, abs=1e-6)

    def test_single_half_probability(self):
        probs = np.array([[0.5, 0.25, 0.25]])
        assert reconstruction_loss([0], probs) == pytest.approx(math.log(2), rel=1e-12)

    def test_zero_probability_clamped(self):
        probs = np.array([[0.0, 1.0]])
        assert np.isfinite(reconstruction_loss([0], probs))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            reconstruction_loss([], np.zeros((0, 4)))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            n_m, v = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            probs = rng.uniform(0.05, 1.0, size=(n_m, v))
            probs /= probs.sum(axis=1, keepdims=True)
            tokens = rng.integers(0, v, size=n_m)
            analytic = reconstruction_loss_grad(tokens, probs)
            numeric = np.zeros_like(probs)
            h = 1e-6
            for i in range(n_m):
                for j in range(v):
                    up, down = probs.copy(), probs.copy()
                    up[i, j] += h
                    down[i, j] -= h
                    numeric[i, j] = (
                        reconstruction_loss(tokens, up) - reconstruction_loss(tokens, down)
                    ) / (2 * h)
            err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
            assert err < 1e-4


class TestTaptLoss:
    def test_zero_plus_zero(self):
        assert tapt_loss(0.0, 0.0) == 0.0

    def test_sum(self):
        assert tapt_loss(1.5, 0.5) == 2.0

    def test_components_sum_exactly(self):
        cl = contrastive_loss(np.eye(2), np.eye(2), 0.1)
        rl = reconstruction_loss([0], np.array([[0.5, 0.5]]))
        assert tapt_loss(cl, rl) == cl + rl


class TestPretrain:
    def toy_features(self, n=10, d=8, seed=0):
        rng = np.random.default_rng(seed)
        return rng.normal(size=(n, d))

    def test_zero_epochs_identity_encoder(self):
        X = self.toy_features()
        state = pretrain(X, epochs=0, seed=0, n_frames=4)
        np.testing.assert_array_equal(state.params["W_e"], np.eye(2))
        np.testing.assert_array_equal(state.params["W_c"], np.eye(2))
        np.testing.assert_array_equal(state.params["mask_vec"], np.zeros(2))

    def test_deterministic_per_seed(self):
        X = self.toy_features()
        a = pretrain(X, epochs=5, seed=3, n_frames=4)
        b = pretrain(X, epochs=5, seed=3, n_frames=4)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_loss_trace_non_increasing_small_step(self):
        # token-stable regime: two tight frame clusters with a matched
        # two-word codebook, so the piecewise-smooth objective stays on one
        # piece and small gradient steps must descend monotonically
        rng = np.random.default_rng(4)
        signs = rng.choice([-3.0, 3.0], size=(10, 4, 1))
        X = (signs + rng.normal(size=(10, 4, 2)) * 0.1).reshape(10, 8)
        state = init_tapt(8, n_frames=4, codebook_size=2, seed=0)
        state.params["codebook"] = np.array([[-3.0, -3.0], [3.0, 3.0]])
        frames = frames_of(X, 4)
        masked = [np.sort(rng.choice(4, size=1, replace=False)) for _ in range(10)]
        losses = []
        for _ in range(60):
            loss, grads = tapt_loss_and_grads(state, frames, masked)
            losses.append(loss)
            for k, g in grads.items():
                state.params[k] -= 3e-5 * g
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-8)
        assert losses[-1] < losses[0]

    def test_parameter_grads_match_finite_differences(self):
        X = self.toy_features(n=3, d=8, seed=6)
        state = init_tapt(8, n_frames=4, codebook_size=4, seed=1)
        # move well off the identity init so every parameter matters
        rng = np.random.default_rng(7)
        for k, v in state.params.items():
            state.params[k] = v + rng.normal(size=v.shape) * 0.3
        frames = frames_of(X, 4)
        masked = [np.array([0]), np.array([2]), np.array([1])]
        loss, grads = tapt_loss_and_grads(state, frames, masked)
        h = 1e-6
        for name, analytic in grads.items():
            numeric = np.zeros_like(analytic)
            target = state.params[name]
            it = np.nditer(target, flags=["multi_index"])
            while not it.finished:
                ij = it.multi_index
                orig = target[ij]
                target[ij] = orig + h
                up, _ = tapt_loss_and_grads(state, frames, masked)
                target[ij] = orig - h
                down, _ = tapt_loss_and_grads(state, frames, masked)
                target[ij] = orig
                numeric[ij] = (up - down) / (2 * h)
                it.iternext()
            denom = max(np.linalg.norm(numeric), 1e-8)
            assert np.linalg.norm(analytic - numeric) / denom < 1e-4, name

    def test_pretrain_sees_no_labels(self):
        import inspect

        from alpool import tapt

        signature = inspect.signature(tapt.pretrain)
        assert "labels" not in signature.parameters
        assert "pool" not in signature.parameters

    def test_encode_shapes(self):
        X = self.toy_features(n=6, d=8)
        state = pretrain(X, epochs=2, seed=0, n_frames=4, hidden_dim=3)
        encoded = encode(state, X)
        assert encoded.shape == (6, 12)
        single = encode(state, X[0])
        np.testing.assert_array_equal(single, encoded[0])

    def test_frames_require_divisibility(self):
        with pytest.raises(ValueError):
            frames_of(np.ones(10), 4)

    def test_encoded_features_beat_raw_linear_probe(self):
        # class prototype tiled across frames + per-frame noise: the
        # redundancy the pretext task exploits; 10-seed mean probe accuracy
        from alpool.loop import evaluate
        from alpool.model import init_classifier, train

        def probe(Xtr, ytr, Xte, yte, seed):
            state = init_classifier(Xtr.shape[1], 4, architecture="linear", seed=seed)
            state, _ = train(state, Xtr, np.eye(4)[ytr], learning_rate=0.1,
                             epochs=80, patience=20)
            return evaluate(state, Xte, yte)[0]

        raw_scores, tapt_scores = [], []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            protos = rng.normal(size=(4, 2)) * 3.0
            labels = rng.integers(0, 4, size=600)
            noise = rng.normal(size=(600, 8, 2)) * 1.2
            X = (protos[labels][:, None, :] + noise).reshape(600, 16)
            idx = np.random.default_rng(seed).permutation(600)
            tr, te = idx[:100], idx[200:]
            raw_scores.append(probe(X[tr], labels[tr], X[te], labels[te], seed))
            state = pretrain(X, epochs=30, seed=seed, n_frames=8, codebook_size=8)
            Z = encode(state, X)
            tapt_scores.append(probe(Z[tr], labels[tr], Z[te], labels[te], seed))
        assert np.mean(tapt_scores) >= np.mean(raw_scores)
