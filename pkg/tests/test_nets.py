"""Small dense-network toolkit: softmax family, row normalization with its
backward pass, the MLP forward/backward chain, and SGD with momentum."""

import numpy as np
import pytest

from spherecode.nets import (
    Mlp,
    SgdMomentum,
    cross_entropy,
    log_softmax,
    normalize_rows_backward,
    normalize_rows_forward,
    softmax,
)


class TestSoftmaxFamily:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        p = softmax(rng.normal(size=(50, 9)) * 10)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(20, 6))
        np.testing.assert_allclose(
            softmax(logits), softmax(logits + 123.0), atol=1e-12
        )

    def test_extreme_logits_stable(self):
        p = softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.isfinite(p).all()
        assert p[0, 0] == pytest.approx(1.0)

    def test_log_softmax_consistent(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(30, 5))
        np.testing.assert_allclose(
            log_softmax(logits), np.log(softmax(logits)), atol=1e-12
        )

    def test_cross_entropy_uniform(self):
        """Zero logits give -log(1/k) = log k for any target."""
        ce = cross_entropy(np.zeros((4, 7)), np.array([0, 3, 5, 6]))
        np.testing.assert_allclose(ce, np.log(7.0), atol=1e-12)

    def test_cross_entropy_hand_value(self):
        logits = np.array([[2.0, 0.0]])
        want = -np.log(np.exp(2.0) / (np.exp(2.0) + 1.0))
        assert cross_entropy(logits, np.array([0]))[0] == pytest.approx(want)


class TestRowNormalization:
    def test_forward_unit_norm(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(12, 6)) * 5
        y, norms = normalize_rows_forward(x)
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(y * norms, x, atol=1e-12)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            x = rng.normal(size=(3, 4)) * 2
            g_out = rng.normal(size=(3, 4))
            y, norms = normalize_rows_forward(x)
            got = normalize_rows_backward(g_out, y, norms)
            eps = 1e-6
            want = np.zeros_like(x)
            for i in range(x.shape[0]):
                for j in range(x.shape[1]):
                    xp, xm = x.copy(), x.copy()
                    xp[i, j] += eps
                    xm[i, j] -= eps
                    fp = np.sum(g_out * normalize_rows_forward(xp)[0])
                    fm = np.sum(g_out * normalize_rows_forward(xm)[0])
                    want[i, j] = (fp - fm) / (2 * eps)
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)

    def test_backward_orthogonal_to_output(self):
        """Gradient through normalization has no radial component."""
        rng = np.random.default_rng(5)
        x = rng.normal(size=(8, 5))
        y, norms = normalize_rows_forward(x)
        g = normalize_rows_backward(rng.normal(size=(8, 5)), y, norms)
        np.testing.assert_allclose(np.sum(g * y, axis=1), 0.0, atol=1e-12)


class TestMlp:
    def test_output_shape_and_norm(self):
        net = Mlp([7, 16, 5], rng=0)
        out, _ = net.forward(np.random.default_rng(0).normal(size=(11, 7)))
        assert out.shape == (11, 5)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_unnormalized_variant(self):
        net = Mlp([4, 4], normalize_output=False, rng=1)
        out, _ = net.forward(np.ones((3, 4)))
        assert not np.allclose(np.linalg.norm(out, axis=1), 1.0)

    def test_seeded_construction(self):
        a, b = Mlp([5, 8, 3], rng=7), Mlp([5, 8, 3], rng=7)
        for wa, wb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(wa, wb)

    def test_rejects_single_dim(self):
        with pytest.raises(ValueError):
            Mlp([4])

    def test_backward_matches_fd(self):
        """Full parameter and input gradients against central differences,
        using a scalar probe loss sum(g * output)."""
        rng = np.random.default_rng(6)
        for norm_out in (True, False):
            net = Mlp([5, 6, 4], normalize_output=norm_out, rng=2)
            x = rng.normal(size=(3, 5))
            g_probe = rng.normal(size=(3, 4))

            out, cache = net.forward(x)
            grads, g_in = net.backward(cache, g_probe)
            params = net.params()
            eps = 1e-6

            for p, g in zip(params, grads):
                flat = p.ravel()
                idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
                for k in idx:
                    keep = flat[k]
                    flat[k] = keep + eps
                    fp = np.sum(g_probe * net.forward(x)[0])
                    flat[k] = keep - eps
                    fm = np.sum(g_probe * net.forward(x)[0])
                    flat[k] = keep
                    want = (fp - fm) / (2 * eps)
                    assert g.ravel()[k] == pytest.approx(want, rel=1e-4, abs=1e-7)

            for i in range(x.shape[0]):
                for j in range(x.shape[1]):
                    xp, xm = x.copy(), x.copy()
                    xp[i, j] += eps
                    xm[i, j] -= eps
                    fp = np.sum(g_probe * net.forward(xp)[0])
                    fm = np.sum(g_probe * net.forward(xm)[0])
                    want = (fp - fm) / (2 * eps)
                    assert g_in[i, j] == pytest.approx(want, rel=1e-4, abs=1e-7)


class TestSgdMomentum:
    def test_two_hand_steps(self):
        """v <- mu v + g; p <- p - lr v, verified over two updates."""
        p = np.array([1.0, -2.0])
        opt = SgdMomentum([p], lr=0.1, momentum=0.5)
        g1 = np.array([1.0, 1.0])
        opt.step([g1])
        np.testing.assert_allclose(p, [0.9, -2.1])
        g2 = np.array([0.0, 2.0])
        opt.step([g2])
        # v2 = 0.5*[1,1] + [0,2] = [0.5, 2.5]
        np.testing.assert_allclose(p, [0.85, -2.35])

    def test_updates_in_place(self):
        p = np.zeros(3)
        ref = p
        SgdMomentum([p], lr=1.0, momentum=0.0).step([np.ones(3)])
        assert ref is p
        np.testing.assert_allclose(p, -1.0)

    def test_zero_momentum_is_plain_sgd(self):
        rng = np.random.default_rng(8)
        p = rng.normal(size=(4, 2))
        keep = p.copy()
        g = rng.normal(size=(4, 2))
        SgdMomentum([p], lr=0.3, momentum=0.0).step([g])
        np.testing.assert_allclose(p, keep - 0.3 * g, atol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            SgdMomentum([np.zeros(2)], lr=0.0)
        with pytest.raises(ValueError):
            SgdMomentum([np.zeros(2)], lr=0.1, momentum=1.0)
