"""SR1 trust-region machinery.

Provides an exact small-dimension trust-region subproblem solver (dense
eigendecomposition plus safeguarded root finding on the secular equation,
with an explicit hard-case branch), the guarded SR1 rank-one Hessian update,
the improvement ratio, and the single accept/reject/radius step that ties
them together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

_RATIO_DENOM_FLOOR = 1e-14
_SYM_TOL = 1e-10


@dataclass(frozen=True)
class TrustRegionState:
    """Snapshot of the local model: center, radius, Hessian approximation,
    and cached objective value/gradient at the center."""

    center: np.ndarray
    radius: float
    max_radius: float
    hessian: np.ndarray
    f_center: float
    grad_center: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        grad = np.asarray(self.grad_center, dtype=float).ravel()
        H = np.asarray(self.hessian, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "grad_center", grad)
        if not (0.0 < self.radius <= self.max_radius * (1.0 + 1e-12)):
            raise ValueError(
                f"radius must satisfy 0 < {self.radius} <= {self.max_radius}"
            )
        scale = max(1.0, float(np.abs(H).max()) if H.size else 1.0)
        if np.abs(H - H.T).max() > _SYM_TOL * scale:
            raise ValueError("Hessian approximation is not symmetric")
        object.__setattr__(self, "hessian", 0.5 * (H + H.T))


@dataclass(frozen=True)
class TrStepOutcome:
    """Result of one trust-region step."""

    accepted: bool
    new_state: TrustRegionState
    trial_point: np.ndarray
    rho: float
    step_norm: float
    hessian_updated: bool


def quadratic_model(state: TrustRegionState, s) -> float:
    """Value of the local quadratic model at step s from the center."""
    s = np.asarray(s, dtype=float).ravel()
    if s.shape != state.center.shape:
        raise ValueError("step dimension mismatch")
    return float(
        state.f_center + state.grad_center @ s + 0.5 * s @ (state.hessian @ s)
    )


def _check_symmetric(H: np.ndarray):
    scale = max(1.0, float(np.abs(H).max()) if H.size else 1.0)
    if np.abs(H - H.T).max() > _SYM_TOL * scale:
        raise ValueError("Hessian must be symmetric")


def solve_subproblem(grad, H, delta: float) -> tuple[np.ndarray, float]:
    """Global minimizer of the quadratic model over the ball ||s|| <= delta.

    Exact eigendecomposition route: diagonalize H, then either take the
    interior stationary point or find the Lagrange multiplier on the
    boundary by safeguarded root finding; the hard case adds a component
    along the most-negative-curvature eigenvector to reach the boundary
    (sign fixed so its first nonzero coordinate is positive).

    Returns
    -------
    (s, model_decrease)
        The step and the nonnegative decrease m(0) - m(s).
    """
    g = np.asarray(grad, dtype=float).ravel()
    H = np.asarray(H, dtype=float)
    if H.shape != (g.size, g.size):
        raise ValueError("gradient/Hessian dimension mismatch")
    if delta <= 0:
        raise ValueError("trust radius must be positive")
    _check_symmetric(H)
    H = 0.5 * (H + H.T)

    evals, Q = np.linalg.eigh(H)
    gh = Q.T @ g
    lam_min = float(evals[0])
    lam_lo = max(0.0, -lam_min)
    escale = max(1.0, float(np.abs(evals).max()))
    gscale = max(1.0, float(np.linalg.norm(g)))

    def step_for(lam: float) -> np.ndarray:
        denom = evals + lam
        coeff = np.zeros_like(gh)
        alive = denom > 0
        coeff[alive] = -gh[alive] / denom[alive]
        return coeff

    def norm_at(lam: float) -> float:
        return float(np.linalg.norm(step_for(lam)))

    critical = evals + lam_lo <= 1e-12 * escale
    g_critical = np.abs(gh[critical]) > 1e-13 * gscale

    if lam_lo == 0.0 and not np.any(g_critical):
        s_try = step_for(0.0)
        if np.linalg.norm(s_try) <= delta:
            s = Q @ s_try
            return s, _decrease(g, H, s)

    # Boundary solution: lambda >= lam_lo with ||s(lambda)|| = delta.
    eps = 1e-14 * max(1.0, lam_lo) + 1e-300
    left = lam_lo + eps
    if np.any(g_critical) or norm_at(left) > delta:
        lo = left
        hi = max(2.0 * lam_lo, lam_lo + float(np.linalg.norm(g)) / delta, lam_lo + 1.0)
        while norm_at(hi) > delta:
            hi = lam_lo + 2.0 * (hi - lam_lo)
        if norm_at(lo) <= delta:
            # Root numerically indistinguishable from lam_lo: fall through to
            # the boundary augmentation below.
            lam = lam_lo
        else:
            lam = brentq(lambda l: 1.0 / delta - 1.0 / norm_at(l), lo, hi,
                         xtol=1e-15 * max(1.0, lam_lo + 1.0), rtol=8.9e-16)
            s = Q @ step_for(lam)
            return s, _decrease(g, H, s)
    else:
        lam = lam_lo

    # Hard case (or root at lam_lo): augment the pseudo-inverse solution with
    # a null-space direction to reach the boundary.
    base = step_for(lam)
    base_norm_sq = float(base @ base)
    tau_sq = delta * delta - base_norm_sq
    s = Q @ base
    if tau_sq > 0.0:
        v = Q[:, 0].copy()
        nz = np.nonzero(np.abs(v) > 1e-13)[0]
        if nz.size and v[nz[0]] < 0:
            v = -v
        s = s + math.sqrt(tau_sq) * v
    return s, _decrease(g, H, s)


def _decrease(g, H, s) -> float:
    return max(0.0, -float(g @ s + 0.5 * s @ (H @ s)))


def kkt_residuals(grad, H, delta: float, s, lam: float = None) -> dict:
    """Residuals of the exact optimality conditions for a candidate step.

    When ``lam`` is not given it is recovered by least squares from the
    stationarity condition.  Returns stationarity / complementarity /
    feasibility residuals and the smallest eigenvalue of H + lam I.
    """
    g = np.asarray(grad, dtype=float).ravel()
    H = np.asarray(H, dtype=float)
    s = np.asarray(s, dtype=float).ravel()
    if lam is None:
        sn = float(s @ s)
        lam = 0.0 if sn == 0.0 else max(0.0, -float(s @ (H @ s + g)) / sn)
    r_stat = float(np.linalg.norm((H + lam * np.eye(len(g))) @ s + g))
    norm_s = float(np.linalg.norm(s))
    return {
        "lam": lam,
        "stationarity": r_stat,
        "complementarity": abs(lam * (delta - norm_s)),
        "feasibility": max(0.0, norm_s - delta),
        "min_eig_shifted": float(np.linalg.eigvalsh(H + lam * np.eye(len(g)))[0]),
    }


def sr1_update(H, s, y, r: float) -> tuple[np.ndarray, bool]:
    """Guarded symmetric rank-one update of the Hessian approximation.

    Applies H + zz^T / (z^T s) with z = y - Hs only when
    |z^T s| >= r ||s|| ||z|| and the residual z is nonzero; otherwise
    returns H unchanged with ``updated = False``.
    """
    H = np.asarray(H, dtype=float)
    s = np.asarray(s, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if H.shape != (s.size, s.size) or y.shape != s.shape:
        raise ValueError("dimension mismatch in SR1 update")
    z = y - H @ s
    denom = float(z @ s)
    z_norm = float(np.linalg.norm(z))
    s_norm = float(np.linalg.norm(s))
    if z_norm == 0.0 or denom == 0.0 or abs(denom) < r * s_norm * z_norm:
        return H, False
    H_new = H + np.outer(z, z) / denom
    return 0.5 * (H_new + H_new.T), True


def improvement_ratio(f_old: float, f_trial: float, model_decrease: float) -> float:
    """Actual decrease over model-predicted decrease.

    A predicted decrease below the floor yields a sign-preserving sentinel:
    +inf when the objective actually improved, -inf otherwise.
    """
    if abs(model_decrease) < _RATIO_DENOM_FLOOR:
        return math.inf if f_old - f_trial > 0.0 else -math.inf
    return (f_old - f_trial) / model_decrease


def tr_step(state: TrustRegionState, f_trial: float, grad_trial,
            s, model_decrease: float, eta: float, r: float,
            delta_max: float = None) -> TrStepOutcome:
    """One accept/reject step with radius control and the SR1 update.

    The step is accepted iff rho > eta.  The radius doubles (capped) after a
    very successful near-full-length step, halves when rho < 0.1, and is
    kept otherwise.  The SR1 update uses the trial gradient whether or not
    the step is accepted.
    """
    s = np.asarray(s, dtype=float).ravel()
    grad_trial = np.asarray(grad_trial, dtype=float).ravel()
    if delta_max is None:
        delta_max = state.max_radius
    step_norm = float(np.linalg.norm(s))
    rho = improvement_ratio(state.f_center, f_trial, model_decrease)
    accepted = rho > eta

    if rho > 0.75 and step_norm > 0.8 * state.radius:
        new_radius = min(delta_max, 2.0 * state.radius)
    elif rho < 0.1:
        new_radius = 0.5 * state.radius
    else:
        new_radius = state.radius

    y = grad_trial - state.grad_center
    H_new, updated = sr1_update(state.hessian, s, y, r)

    trial_point = state.center + s
    if accepted:
        new_state = replace(
            state, center=trial_point, radius=new_radius, max_radius=delta_max,
            hessian=H_new, f_center=f_trial, grad_center=grad_trial,
        )
    else:
        new_state = replace(state, radius=new_radius, max_radius=delta_max,
                            hessian=H_new)
    return TrStepOutcome(
        accepted=accepted, new_state=new_state, trial_point=trial_point,
        rho=rho, step_norm=step_norm, hessian_updated=updated,
    )
