"""Tests for grasp representation, evaluator, generator, and hard negatives."""

import numpy as np
import pytest

from planfirst.bench import roc_auc
from planfirst.bps import make_basis
from planfirst.grasp_models import (
    GRASP_DIM,
    HARD_NEG_MIN_ROT,
    HARD_NEG_MIN_TRANS,
    HARD_NEG_ROT,
    HARD_NEG_TRANS,
    Grasp,
    devectorize,
    encode_centered,
    evaluate,
    evaluate_batch,
    evaluator_input,
    generate,
    make_evaluator,
    make_generator,
    make_hard_negative,
    train_evaluator,
    train_generator,
    vectorize,
)
from planfirst.neural import forward, mlp_to_bytes
from planfirst.se3 import Pose, pose_error, quat_from_euler_xyz


def _random_grasp(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Grasp(
        pose=Pose(q=q, t=rng.normal(scale=0.1, size=3)),
        theta_p=rng.uniform(-0.3, 1.8, 16),
        theta_g=rng.uniform(-0.3, 1.8, 16),
    )


class TestVectorize:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = _random_grasp(rng)
            g2 = devectorize(vectorize(g))
            assert np.allclose(g2.pose.q, g.pose.q)
            assert np.array_equal(g2.pose.t, g.pose.t)
            assert np.array_equal(g2.theta_p, g.theta_p)
            assert np.array_equal(g2.theta_g, g.theta_g)

    def test_dim(self):
        g = _random_grasp(np.random.default_rng(1))
        assert vectorize(g).shape == (GRASP_DIM,)

    def test_devectorize_normalizes_quaternion(self):
        v = np.zeros(GRASP_DIM)
        v[3:7] = [2.0, 0.0, 0.0, 0.0]
        assert np.allclose(devectorize(v).pose.q, [1, 0, 0, 0])

    def test_devectorize_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            devectorize(np.zeros(GRASP_DIM + 1))


class TestEvaluator:
    def test_zero_net_scores_half(self):
        net = make_evaluator(8)
        for layer in net.layers:
            layer.w[:] = 0.0
            layer.b[:] = 0.0
        enc = np.zeros(8)
        g = _random_grasp(np.random.default_rng(2))
        assert evaluate(net, enc, np.zeros(3), g) == 0.5

    def test_batch_matches_single_bit_exact(self):
        rng = np.random.default_rng(3)
        net = make_evaluator(16, hidden=(32,), seed=4)
        enc = rng.random(16)
        centroid = rng.normal(size=3)
        grasps = [_random_grasp(rng) for _ in range(512)]
        batch = evaluate_batch(net, enc, centroid, grasps)
        singles = np.array([evaluate(net, enc, centroid, g) for g in grasps])
        assert np.array_equal(batch, singles)

    def test_centroid_shift_invariance(self):
        # Shifting the grasp and the centroid together must not change the input.
        rng = np.random.default_rng(5)
        enc = rng.random(16)
        vec = vectorize(_random_grasp(rng))
        shift = np.array([0.3, -0.2, 0.5])
        x0 = evaluator_input(enc, np.zeros(3), vec)
        v2 = vec.copy()
        v2[0:3] += shift
        x1 = evaluator_input(enc, shift, v2)
        assert np.allclose(x0, x1)

    def test_separable_toy_problem(self):
        # Positives near the origin, negatives far away: a trained evaluator
        # should separate them almost perfectly.
        rng = np.random.default_rng(6)
        basis = make_basis(16, radius=0.15, seed=0)
        n = 120
        enc = np.zeros((n, 16))
        cents = np.zeros((n, 3))
        pos_vecs = np.zeros((n, GRASP_DIM))
        neg_vecs = np.zeros((n, GRASP_DIM))
        for i in range(n):
            pos_vecs[i, 0:3] = rng.normal(scale=0.005, size=3)
            neg_vecs[i, 0:3] = rng.normal(scale=0.005, size=3) + [0.2, 0.0, 0.0]
            pos_vecs[i, 3] = neg_vecs[i, 3] = 1.0
        x_pos = np.stack([evaluator_input(enc[i], cents[i], pos_vecs[i]) for i in range(n)])
        x_neg = np.stack([evaluator_input(enc[i], cents[i], neg_vecs[i]) for i in range(n)])
        net = make_evaluator(16, hidden=(32,), seed=7)
        train_evaluator(net, x_pos, x_neg, pos_vecs, enc, cents,
                        epochs=600, lr=5e-3, seed=0)
        sp = forward(net, x_pos)[:, 0]
        sn = forward(net, x_neg)[:, 0]
        acc = (np.sum(sp > 0.5) + np.sum(sn < 0.5)) / (2 * n)
        assert acc >= 0.99
        del basis

    def test_label_shuffle_destroys_auc(self):
        # Training against shuffled labels must not produce real skill.
        rng = np.random.default_rng(8)
        n = 150
        enc = np.zeros((n, 16))
        cents = np.zeros((n, 3))
        vecs = rng.normal(scale=0.05, size=(n, GRASP_DIM))
        vecs[:, 3] = 1.0
        x = np.stack([evaluator_input(enc[i], cents[i], vecs[i]) for i in range(n)])
        labels = rng.integers(0, 2, n)
        x_pos, x_neg = x[labels == 1], x[labels == 0]
        net = make_evaluator(16, hidden=(32,), seed=9)
        train_evaluator(net, x_pos, x_neg, vecs[labels == 1], enc[labels == 1],
                        cents[labels == 1], epochs=5, seed=0)
        # Score a fresh, larger shuffled-label sample of the same distribution.
        m = 2000
        vecs2 = rng.normal(scale=0.05, size=(m, GRASP_DIM))
        vecs2[:, 3] = 1.0
        x2 = np.stack([evaluator_input(enc[0], cents[0], vecs2[i]) for i in range(m)])
        labels2 = rng.integers(0, 2, m)
        auc = roc_auc(forward(net, x2)[:, 0], labels2)
        assert 0.45 <= auc <= 0.55

    def test_train_requires_both_classes(self):
        net = make_evaluator(8)
        x = np.zeros((4, 8 + GRASP_DIM))
        with pytest.raises(ValueError):
            train_evaluator(net, x, np.zeros((0, 8 + GRASP_DIM)),
                            np.zeros((4, GRASP_DIM)), np.zeros((4, 8)),
                            np.zeros((4, 3)))


class TestHardNegatives:
    def test_bounds_and_floor(self):
        rng = np.random.default_rng(10)
        base = _random_grasp(rng)
        for _ in range(10_000):
            neg = make_hard_negative(base, rng)
            dt = neg.pose.t - base.pose.t
            assert np.all(np.abs(dt) <= HARD_NEG_TRANS + 1e-12)
            pos_err, rot_err = pose_error(base.pose, neg.pose)
            assert np.all(np.abs(rot_err) <= np.sqrt(3) * HARD_NEG_ROT + 1e-9)
            # Floor: never both inside the near-identity dead zone.
            inside_t = np.linalg.norm(dt) < HARD_NEG_MIN_TRANS
            inside_r = np.all(np.abs(rot_err) < HARD_NEG_MIN_ROT - 1e-9)
            assert not (inside_t and inside_r)

    def test_hand_configuration_untouched(self):
        rng = np.random.default_rng(11)
        base = _random_grasp(rng)
        neg = make_hard_negative(base, rng)
        assert np.array_equal(neg.theta_p, base.theta_p)
        assert np.array_equal(neg.theta_g, base.theta_g)


class TestGenerator:
    def _toy_data(self, rng, n=160):
        basis = make_basis(16, radius=0.15, seed=1)
        pts = rng.normal(scale=0.03, size=(40, 3))
        clouds = [pts]
        vecs = np.zeros((n, GRASP_DIM))
        vecs[:, 0:3] = [0.05, 0.0, 0.1] + rng.normal(scale=0.003, size=(n, 3))
        vecs[:, 3:7] = quat_from_euler_xyz(np.array([0.0, 0.0, 0.3]))
        vecs[:, 3:7] += rng.normal(scale=0.002, size=(n, 4))
        vecs[:, 7:39] = 0.5 + rng.normal(scale=0.01, size=(n, 32))
        return basis, clouds, vecs, np.zeros(n, dtype=int)

    def test_training_reduces_nll(self):
        rng = np.random.default_rng(12)
        basis, clouds, vecs, cidx = self._toy_data(rng)
        net = make_generator(16, hidden=(32,), n_comp=4, seed=13)
        hist = train_generator(net, basis, clouds, vecs, cidx, epochs=150, batch=32, seed=0)
        assert hist[-1] < hist[0] - 0.3 * abs(hist[0])

    def test_unimodal_distribution_recovered(self):
        rng = np.random.default_rng(14)
        basis, clouds, vecs, cidx = self._toy_data(rng)
        net = make_generator(16, hidden=(32,), n_comp=4, seed=15)
        train_generator(net, basis, clouds, vecs, cidx, epochs=800, batch=32, seed=0)
        enc, cen = encode_centered(
            basis, type("C", (), {"points": clouds[0]})())
        samples = generate(net, enc, cen, 64, seed=0)
        true_pose = devectorize(vecs[0]).pose
        pos_errs, rot_errs = [], []
        for g in samples:
            pe, re = pose_error(true_pose, g.pose)
            pos_errs.append(pe)
            rot_errs.append(np.max(np.abs(re)))
        assert np.mean(pos_errs) < 0.02
        assert np.mean(rot_errs) < np.radians(15.0)

    def test_sample_determinism(self):
        rng = np.random.default_rng(16)
        net = make_generator(16, hidden=(32,), n_comp=4, seed=17)
        enc = rng.random(16)
        a = generate(net, enc, np.zeros(3), 8, seed=5)
        b = generate(net, enc, np.zeros(3), 8, seed=5)
        for ga, gb in zip(a, b):
            assert np.array_equal(vectorize(ga), vectorize(gb))

    def test_generate_rejects_nonpositive_k(self):
        net = make_generator(8, hidden=(16,), n_comp=2)
        with pytest.raises(ValueError):
            generate(net, np.zeros(8), np.zeros(3), 0)

    def test_noiseless_training_bit_exact(self):
        rng = np.random.default_rng(18)
        basis, clouds, vecs, cidx = self._toy_data(rng, n=64)
        blobs = []
        for _ in range(2):
            net = make_generator(16, hidden=(32,), n_comp=4, seed=19)
            train_generator(net, basis, clouds, vecs, cidx,
                            epochs=5, seed=3, noise_scale=0.0)
            blobs.append(mlp_to_bytes(net))
        assert blobs[0] == blobs[1]

    def test_trained_evaluator_prefers_positives(self):
        # Score gap between training positives and random grasps after training.
        rng = np.random.default_rng(20)
        basis, clouds, vecs, cidx = self._toy_data(rng, n=120)
        enc, cen = encode_centered(
            basis, type("C", (), {"points": clouds[0]})())
        encs = np.broadcast_to(enc, (len(vecs), len(enc))).copy()
        cents = np.broadcast_to(cen, (len(vecs), 3)).copy()
        neg = rng.normal(scale=0.2, size=vecs.shape)
        neg[:, 3] = 1.0
        x_pos = np.stack([evaluator_input(enc, cen, v) for v in vecs])
        x_neg = np.stack([evaluator_input(enc, cen, v) for v in neg])
        net = make_evaluator(16, hidden=(32,), seed=21)
        train_evaluator(net, x_pos, x_neg, vecs, encs, cents, epochs=300, lr=5e-3, seed=0)
        gap = float(np.mean(forward(net, x_pos)[:, 0]) - np.mean(forward(net, x_neg)[:, 0]))
        assert gap > 0.2
