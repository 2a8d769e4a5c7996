"""Trust-region subproblem, SR1 update, and step logic."""

import math

import numpy as np
import pytest

from lago import (
    TrustRegionState,
    improvement_ratio,
    kkt_residuals,
    quadratic_model,
    solve_subproblem,
    sr1_update,
    tr_step,
)


def disk_grid_best(g, H, delta, n=100_000, seed=0):
    """Dense-sampling oracle: best model value over the feasible disk."""
    rng = np.random.default_rng(seed)
    r = delta * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    vals = pts @ g + 0.5 * np.einsum("ij,jk,ik->i", pts, H, pts)
    return float(vals.min())


def model_value(g, H, s):
    return float(g @ s + 0.5 * s @ (H @ s))


def assert_kkt(g, H, delta, s):
    res = kkt_residuals(g, H, delta, s)
    gnorm = float(np.linalg.norm(g))
    assert res["lam"] >= -1e-12
    assert res["stationarity"] <= 1e-8 * max(1.0, gnorm)
    assert res["complementarity"] <= 1e-8 * delta
    assert res["feasibility"] <= 1e-8 * delta
    assert res["min_eig_shifted"] >= -1e-8


class TestQuadraticModel:
    def state(self, f=0.0, grad=(1.0, 0.0), H=None):
        H = np.eye(2) if H is None else np.asarray(H)
        return TrustRegionState(center=np.zeros(2), radius=1.0, max_radius=10.0,
                                hessian=H, f_center=f, grad_center=np.asarray(grad))

    def test_zero_step_returns_center_value(self):
        st = self.state(f=3.5)
        assert quadratic_model(st, [0.0, 0.0]) == 3.5

    def test_linear_model(self):
        st = self.state(f=1.0, grad=(2.0, -1.0), H=np.zeros((2, 2)))
        assert quadratic_model(st, [1.0, 1.0]) == pytest.approx(2.0)

    def test_hand_quadratic(self):
        st = self.state(f=0.0, grad=(1.0, 0.0), H=np.eye(2))
        assert quadratic_model(st, [1.0, 1.0]) == pytest.approx(2.0)


class TestSubproblem:
    def test_interior_newton_step(self):
        s, dec = solve_subproblem([0.5, 0.0], np.eye(2), 1.0)
        np.testing.assert_allclose(s, [-0.5, 0.0], atol=1e-12)
        assert dec == pytest.approx(0.125)
        assert_kkt(np.array([0.5, 0.0]), np.eye(2), 1.0, s)

    def test_boundary_step(self):
        g = np.array([4.0, 0.0])
        s, dec = solve_subproblem(g, np.eye(2), 1.0)
        np.testing.assert_allclose(s, [-1.0, 0.0], atol=1e-10)
        assert dec == pytest.approx(3.5)
        assert_kkt(g, np.eye(2), 1.0, s)

    def test_hard_case_two_minimizers_tiebreak(self):
        # H = diag(-1, 1), g = (0, 1): minimizers (+-sqrt(0.75), -0.5) with
        # value -0.75; the positive branch is chosen deterministically.
        g = np.array([0.0, 1.0])
        H = np.diag([-1.0, 1.0])
        s, dec = solve_subproblem(g, H, 1.0)
        np.testing.assert_allclose(s, [math.sqrt(0.75), -0.5], atol=1e-10)
        assert model_value(g, H, s) == pytest.approx(-0.75, abs=1e-12)
        assert dec == pytest.approx(0.75, abs=1e-12)
        grid = disk_grid_best(g, H, 1.0, n=1_000_000, seed=1)
        assert model_value(g, H, s) <= grid + 1e-6
        assert_kkt(g, H, 1.0, s)

    def test_pure_negative_curvature_zero_gradient(self):
        H = np.diag([-2.0, 3.0])
        s, dec = solve_subproblem(np.zeros(2), H, 0.5)
        assert np.linalg.norm(s) == pytest.approx(0.5, rel=1e-12)
        assert dec == pytest.approx(0.25, rel=1e-10)
        assert_kkt(np.zeros(2), H, 0.5, s)

    def test_zero_gradient_psd_returns_zero(self):
        s, dec = solve_subproblem(np.zeros(2), np.eye(2), 1.0)
        np.testing.assert_allclose(s, 0.0)
        assert dec == 0.0

    def test_zero_hessian_steepest_descent(self):
        g = np.array([3.0, 4.0])
        s, dec = solve_subproblem(g, np.zeros((2, 2)), 2.0)
        np.testing.assert_allclose(s, -2.0 * g / 5.0, rtol=1e-10)
        assert dec == pytest.approx(10.0, rel=1e-10)

    def test_non_symmetric_rejected(self):
        with pytest.raises(ValueError):
            solve_subproblem([1.0, 0.0], np.array([[1.0, 2.0], [0.0, 1.0]]), 1.0)

    def test_kkt_and_grid_on_random_instances(self):
        # 100 random d=2 instances including indefinite and hard-case H.
        rng = np.random.default_rng(2)
        for trial in range(100):
            kind = trial % 4
            if kind == 0:  # generic symmetric
                A = rng.normal(size=(2, 2))
                H = 0.5 * (A + A.T)
                g = rng.normal(size=2)
            elif kind == 1:  # positive definite
                A = rng.normal(size=(2, 2))
                H = A @ A.T + 0.5 * np.eye(2)
                g = rng.normal(size=2)
            elif kind == 2:  # indefinite
                Q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
                H = Q @ np.diag([-abs(rng.normal()) - 0.2, abs(rng.normal()) + 0.2]) @ Q.T
                g = rng.normal(size=2)
            else:  # exact hard case: g orthogonal to the lowest eigenvector
                Q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
                lo = -abs(rng.normal()) - 0.5
                H = Q @ np.diag([lo, lo + abs(rng.normal()) + 0.5]) @ Q.T
                g = Q[:, 1] * rng.normal() * 0.1
            delta = float(rng.uniform(0.2, 2.0))
            s, dec = solve_subproblem(g, H, delta)
            assert dec >= 0.0
            assert np.linalg.norm(s) <= delta + 1e-10
            assert_kkt(g, H, delta, s)
            grid = disk_grid_best(g, H, delta, n=100_000, seed=trial)
            assert model_value(g, H, s) <= grid + 1e-6


class TestSr1Update:
    def test_hand_worked_update(self):
        H = np.eye(2)
        s = np.array([1.0, 0.0])
        y = np.array([3.0, 0.0])
        H_new, updated = sr1_update(H, s, y, r=1e-8)
        assert updated
        np.testing.assert_allclose(H_new, np.diag([3.0, 1.0]), atol=1e-14)

    def test_zero_residual_skips(self):
        H = np.diag([2.0, 5.0])
        s = np.array([1.0, 1.0])
        y = H @ s
        H_new, updated = sr1_update(H, s, y, r=1e-8)
        assert not updated
        np.testing.assert_array_equal(H_new, H)

    def test_guard_blocks_tiny_denominator(self):
        H = np.eye(2)
        s = np.array([1.0, 0.0])
        z = np.array([0.0, 1.0])          # z orthogonal to s: denominator 0
        y = H @ s + z
        H_new, updated = sr1_update(H, s, y, r=1e-8)
        assert not updated

    def test_finite_termination_on_quadratics(self):
        # Exact curvature along d independent steps reproduces the Hessian.
        rng = np.random.default_rng(3)
        for _ in range(5):
            A = rng.normal(size=(3, 3))
            A = 0.5 * (A + A.T)
            H = np.zeros((3, 3))
            steps = rng.normal(size=(3, 3)) + np.eye(3)
            for k in range(3):
                s = steps[k]
                y = A @ s
                H, _ = sr1_update(H, s, y, r=1e-8)
            np.testing.assert_allclose(H, A, atol=1e-8)

    def test_symmetry_preserved_over_sequences(self):
        rng = np.random.default_rng(4)
        H = np.eye(4)
        for _ in range(50):
            s = rng.normal(size=4)
            y = rng.normal(size=4)
            H, _ = sr1_update(H, s, y, r=1e-8)
        assert np.abs(H - H.T).max() <= 1e-12


class TestImprovementRatio:
    def test_exact_model_gives_one(self):
        assert improvement_ratio(1.0, 0.5, 0.5) == pytest.approx(1.0)

    def test_worse_trial_is_negative(self):
        assert improvement_ratio(1.0, 1.4, 0.5) < 0

    def test_hand_arithmetic(self):
        assert improvement_ratio(1.0, 0.6, 0.5) == pytest.approx(0.8)

    def test_degenerate_denominator_sentinels(self):
        assert improvement_ratio(1.0, 0.9, 0.0) == math.inf
        assert improvement_ratio(1.0, 1.1, 0.0) == -math.inf
        assert improvement_ratio(1.0, 1.0, 1e-16) == -math.inf


class TestTrStep:
    def make_state(self, radius=1.0, max_radius=4.0):
        return TrustRegionState(
            center=np.zeros(2), radius=radius, max_radius=max_radius,
            hessian=np.eye(2), f_center=1.0, grad_center=np.array([1.0, 0.0]),
        )

    def test_very_successful_full_step_doubles_radius(self):
        st = self.make_state(radius=1.0)
        s = np.array([-1.0, 0.0])         # ||s|| = radius
        dec = -model_value(st.grad_center, st.hessian, s)
        f_trial = quadratic_model(st, s)  # rho = 1
        out = tr_step(st, f_trial, np.array([0.0, 0.0]), s, dec,
                      eta=5e-4, r=1e-8)
        assert out.accepted
        assert out.new_state.radius == pytest.approx(2.0)
        np.testing.assert_allclose(out.new_state.center, s)

    def test_radius_capped_at_max(self):
        st = self.make_state(radius=3.0, max_radius=4.0)
        s = np.array([-3.0, 0.0])
        out = tr_step(st, -10.0, np.zeros(2), s, 1.0, eta=5e-4, r=1e-8)
        assert out.new_state.radius == pytest.approx(4.0)

    def test_marginal_rho_accepted_but_radius_halves(self):
        # rho = 0.05 > eta = 5e-4: accepted, and rho < 0.1 halves the radius.
        st = self.make_state(radius=1.0)
        s = np.array([-0.5, 0.0])
        dec = 0.5
        f_trial = st.f_center - 0.05 * dec
        out = tr_step(st, f_trial, np.array([0.5, 0.0]), s, dec,
                      eta=5e-4, r=1e-8)
        assert out.accepted
        assert out.new_state.radius == pytest.approx(0.5)
        np.testing.assert_allclose(out.new_state.center, s)

    def test_negative_rho_rejected_and_halved(self):
        st = self.make_state(radius=1.0)
        s = np.array([-0.5, 0.0])
        dec = 0.5
        f_trial = st.f_center + 0.1
        out = tr_step(st, f_trial, np.array([0.5, 0.0]), s, dec,
                      eta=5e-4, r=1e-8)
        assert not out.accepted
        np.testing.assert_allclose(out.new_state.center, np.zeros(2))
        assert out.new_state.radius == pytest.approx(0.5)

    def test_hessian_updated_even_on_rejection(self):
        st = self.make_state(radius=1.0)
        s = np.array([-0.5, 0.0])
        grad_trial = np.array([5.0, 1.0])  # curvature info despite rejection
        out = tr_step(st, st.f_center + 1.0, grad_trial, s, 0.5,
                      eta=5e-4, r=1e-8)
        assert not out.accepted
        assert out.hessian_updated
        assert not np.allclose(out.new_state.hessian, st.hessian)

    def test_step_norm_respects_radius(self):
        st = self.make_state(radius=1.0)
        s, dec = solve_subproblem(st.grad_center, st.hessian, st.radius)
        out = tr_step(st, quadratic_model(st, s), np.zeros(2), s, dec,
                      eta=5e-4, r=1e-8)
        assert out.step_norm <= st.radius + 1e-10
