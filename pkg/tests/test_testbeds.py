"""Synthetic testbeds: losses, gradients, curvature, ground-truth construction."""

import numpy as np
import pytest

from lotion_lab.quant import QuantFormat, cast_rtn
from lotion_lab.rounding import RTN, Rr
from lotion_lab.tensorcore import RngStream
from lotion_lab.testbeds import (
    PowerLawTask,
    TwoLayerTask,
    gt_rounded_loss,
    quadratic_loss_grad,
    twolayer_loss_grads,
)

INT4 = QuantFormat.uniform_int(4)


def central_diff(f, x, i, h):
    xp, xm = x.copy(), x.copy()
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2 * h)


def central_diff4(f, x, i, h):
    """Fourth-order stencil; needed where the loss is quartic in the weights."""
    vals = []
    for d in (-2 * h, -h, h, 2 * h):
        xp = x.copy()
        xp[i] += d
        vals.append(f(xp))
    return (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)


class TestPowerLaw:
    def test_spectrum_shape(self):
        task = PowerLawTask.build(d=100, alpha=1.1, seed=0)
        lam = task.eigenvalues
        assert lam[0] == 1.0
        assert np.all(lam > 0) and np.all(np.diff(lam) < 0)
        assert lam[-1] == pytest.approx(100.0 ** -1.1)

    def test_loss_zero_at_target(self):
        task = PowerLawTask.build(d=16, seed=1)
        loss, grad = quadratic_loss_grad(task.w_star, task)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros(16))

    def test_unit_displacement_identity_hessian(self):
        task = PowerLawTask.build(d=4, alpha=0.0, seed=2)  # flat spectrum: H = I
        w = task.w_star.copy()
        w[0] += 1.0
        loss, grad = quadratic_loss_grad(w, task)
        assert loss == pytest.approx(0.5)
        np.testing.assert_allclose(grad, [1.0, 0.0, 0.0, 0.0])

    def test_gradient_matches_fd(self):
        task = PowerLawTask.build(d=32, seed=3)
        w = RngStream(3, 50).normal(32)
        _, grad = quadratic_loss_grad(w, task)
        for i in range(0, 32, 5):
            fd = central_diff(lambda x: task.loss(x), w, i, 1e-5)
            assert grad[i] == pytest.approx(fd, rel=1e-8)

    def test_dimension_mismatch(self):
        task = PowerLawTask.build(d=8, seed=0)
        with pytest.raises(ValueError):
            task.loss_grad(np.zeros(9))

    def test_task_is_deterministic_in_seed(self):
        a = PowerLawTask.build(d=16, seed=5)
        b = PowerLawTask.build(d=16, seed=5)
        c = PowerLawTask.build(d=16, seed=6)
        np.testing.assert_array_equal(a.w_star, b.w_star)
        assert np.any(a.w_star != c.w_star)

    def test_minibatch_loss_agrees_with_population_on_average(self):
        task = PowerLawTask.build(d=24, seed=7)
        w = RngStream(7, 51).normal(24) * 0.5
        pop = task.loss(w)
        x, y = task.sample_batch(RngStream(7, 52), batch=20000)
        batch_loss, batch_grad = task.batch_loss_grad(w, x, y)
        assert batch_loss == pytest.approx(pop, rel=0.1)
        _, g = task.loss_grad(w)
        np.testing.assert_allclose(batch_grad, g, atol=5e-2)


class TestTwoLayer:
    def test_gt_construction_hits_target_exactly(self):
        task = TwoLayerTask.build(d=32, k=4, seed=0)
        w1, w2 = task.gt_weights()
        assert abs(task.loss(w1, w2)) < 1e-24

    def test_width_one_reduces_to_quadratic(self):
        task = TwoLayerTask.build(d=16, k=1, seed=1)
        quad = PowerLawTask.build(d=16, seed=1)
        w = RngStream(1, 60).normal(16)
        loss, g1, g2 = twolayer_loss_grads(w[None, :], np.ones((1, 1)), task)
        ql, qg = quadratic_loss_grad(w, quad)
        assert loss == pytest.approx(ql, rel=1e-14)
        np.testing.assert_allclose(g1[0], qg, rtol=1e-14)

    def test_gradients_match_fd(self):
        task = TwoLayerTask.build(d=32, k=4, seed=2)
        w1 = RngStream(2, 61).normal(task.k * task.d).reshape(task.k, task.d)
        w2 = RngStream(2, 62).normal(task.k).reshape(1, task.k)
        _, g1, g2 = twolayer_loss_grads(w1, w2, task)

        flat = np.concatenate([w1.reshape(-1), w2.reshape(-1)])

        def f(v):
            return task.loss(v[: task.k * task.d].reshape(task.k, task.d), v[task.k * task.d :].reshape(1, task.k))

        grad = np.concatenate([g1.reshape(-1), g2.reshape(-1)])
        rng = np.random.default_rng(2)
        for i in rng.choice(flat.size, size=24, replace=False):
            fd = central_diff4(f, flat, int(i), 1e-3)
            assert grad[int(i)] == pytest.approx(fd, rel=1e-7, abs=1e-10)

    def test_effective_vector_consistency(self):
        # loss via the effective vector vs forward evaluation against the
        # explicit covariance matrix
        task = TwoLayerTask.build(d=24, k=3, seed=3)
        w1 = RngStream(3, 63).normal(task.k * task.d).reshape(task.k, task.d)
        w2 = RngStream(3, 64).normal(task.k).reshape(1, task.k)
        v = task.effective_vector(w1, w2)
        h = np.diag(task.eigenvalues)
        r = v - task.w_star
        forward = 0.5 * float(r @ h @ r)
        assert task.loss(w1, w2) == pytest.approx(forward, rel=1e-14)

    def test_curvature_diagonal_matches_fd_second_derivative(self):
        task = TwoLayerTask.build(d=12, k=3, seed=4)
        w1 = RngStream(4, 65).normal(task.k * task.d).reshape(task.k, task.d)
        w2 = RngStream(4, 66).normal(task.k).reshape(1, task.k)
        c1, c2 = task.curvature_diags([w1, w2])
        h = 1e-4

        def loss_w1(i, j, delta):
            wp = w1.copy()
            wp[i, j] += delta
            return task.loss(wp, w2)

        for i in range(3):
            for j in (0, 5, 11):
                fd2 = (loss_w1(i, j, h) - 2 * task.loss(w1, w2) + loss_w1(i, j, -h)) / h**2
                assert c1[i, j] == pytest.approx(fd2, rel=1e-4, abs=1e-8)

        def loss_w2(i, delta):
            wp = w2.copy()
            wp[0, i] += delta
            return task.loss(w1, wp)

        for i in range(3):
            fd2 = (loss_w2(i, h) - 2 * task.loss(w1, w2) + loss_w2(i, -h)) / h**2
            assert c2[0, i] == pytest.approx(fd2, rel=1e-4, abs=1e-8)

    def test_shape_validation(self):
        task = TwoLayerTask.build(d=8, k=2, seed=5)
        with pytest.raises(ValueError, match="expected"):
            task.loss_grads(np.zeros((3, 8)), np.zeros((1, 2)))


class TestGtRounded:
    def test_width_one_rtn_equals_cast_target_loss(self):
        task = TwoLayerTask.build(d=32, k=1, seed=6)
        quad = PowerLawTask.build(d=32, seed=6)
        got = gt_rounded_loss(task, INT4, RTN)
        expect = quad.loss(cast_rtn(task.w_star, INT4))
        assert got == pytest.approx(expect, rel=1e-12)

    def test_representable_target_gives_zero_for_all_widths(self):
        w_star = cast_rtn(RngStream(7, 70).normal(16), INT4)
        for k in (1, 2, 4, 8):
            task = TwoLayerTask.build(d=16, k=k, seed=7, w_star=w_star)
            assert abs(gt_rounded_loss(task, INT4, RTN)) < 1e-24
            assert abs(gt_rounded_loss(task, INT4, Rr(RngStream(7, 71)))) < 1e-24

    def test_rr_loss_decays_with_width(self):
        d, seeds = 64, 8
        losses = []
        for k in (1, 4, 16, 64, 256):
            task = TwoLayerTask.build(d=d, k=k, seed=8)
            vals = [gt_rounded_loss(task, INT4, Rr(RngStream(8, 100 + j))) for j in range(seeds)]
            losses.append(np.mean(vals))
        assert losses[-1] < losses[0] / 10.0
        # broadly nonincreasing: each doubling-of-16 drops the loss
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_rtn_loss_is_width_independent(self):
        ref = None
        for k in (1, 2, 8):
            task = TwoLayerTask.build(d=32, k=k, seed=9)
            val = gt_rounded_loss(task, INT4, RTN)
            if ref is None:
                ref = val
            assert val == pytest.approx(ref, rel=1e-10)
