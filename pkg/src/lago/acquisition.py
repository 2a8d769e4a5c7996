"""Expected Improvement and its maximization outside the active trust region.

The maximizer is a seeded multi-start pattern search: candidate starts are
drawn uniformly from the box (plus the best point of a uniform prescreen),
any point falling inside the exclusion ball is pushed radially onto its
surface, and each start is refined by coordinate-pattern ascent with every
iterate clipped to the box and re-projected out of the ball.  All starts are
advanced in lockstep so posterior queries run in batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .errors import InfeasibleExclusionError
from .gradient_gp import GradientGpModel, posterior_batch
from .problems import Box

_STD_FLOOR = 1e-12
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_NEG_INF = -np.inf


@dataclass(frozen=True)
class AcquisitionContext:
    """Inputs of one acquisition maximization: incumbent value, exclusion
    ball, and the design box.

    The exclusion center normally lies inside the box but is allowed
    outside it: the local trust region is not box-constrained, so its
    center can step over the boundary while refining a near-edge minimum.
    """

    f_best: float
    exclusion_center: np.ndarray
    exclusion_radius: float
    domain: Box

    def __post_init__(self):
        object.__setattr__(
            self, "exclusion_center",
            np.asarray(self.exclusion_center, dtype=float).ravel(),
        )
        if self.exclusion_radius < 0:
            raise ValueError("exclusion radius must be nonnegative")
        if not np.all(np.isfinite(self.exclusion_center)):
            raise ValueError("exclusion center must be finite")


def expected_improvement(mean, std, f_best):
    """Closed-form EI under a Gaussian posterior; vectorized.

    Degenerate posteriors (std below 1e-12) use the exact limit
    max(f_best - mean, 0).
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    z = f_best - mean
    out = np.maximum(z, 0.0)
    live = std >= _STD_FLOOR
    if np.any(live):
        zs = np.where(live, z / np.where(live, std, 1.0), 0.0)
        pdf = np.exp(-0.5 * zs * zs) / _SQRT_2PI
        ei = z * ndtr(zs) + std * pdf
        out = np.where(live, ei, out)
    if out.ndim == 0:
        return float(out)
    return out


def _project_out(points: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Push points inside the open ball radially onto its surface.

    The push is repeated with nudged scale factors until the distance is
    >= radius in floating point, so the exterior constraint holds with zero
    slack.  Points exactly at the center move along the first axis.
    """
    if radius == 0.0:
        return points
    pts = points.copy()
    diff = pts - center
    dist = np.linalg.norm(diff, axis=1)
    inside = dist < radius
    if not np.any(inside):
        return pts
    for i in np.nonzero(inside)[0]:
        d = diff[i]
        nd = dist[i]
        if nd == 0.0:
            d = np.zeros_like(d)
            d[0] = 1.0
            nd = 1.0
        scale = radius / nd
        cand = center + d * scale
        while np.linalg.norm(cand - center) < radius:
            scale = np.nextafter(scale, np.inf)
            cand = center + d * scale
        pts[i] = cand
    return pts


def _map_candidates(points: np.ndarray, ctx: AcquisitionContext):
    """Clip to the box, project out of the ball, and flag feasibility.

    Projection may push a point outside the box; such candidates are marked
    infeasible rather than re-clipped (re-clipping could re-enter the ball).
    """
    pts = ctx.domain.clip(points)
    pts = _project_out(pts, ctx.exclusion_center, ctx.exclusion_radius)
    lo, hi = ctx.domain.lower, ctx.domain.upper
    feasible = np.all((pts >= lo) & (pts <= hi), axis=1)
    if ctx.exclusion_radius > 0.0:
        dist = np.linalg.norm(pts - ctx.exclusion_center, axis=1)
        feasible &= dist >= ctx.exclusion_radius
    return pts, feasible


def _ball_covers_box(ctx: AcquisitionContext) -> bool:
    if ctx.exclusion_radius == 0.0:
        return False
    corners = ctx.domain.corners()
    dmax = np.linalg.norm(corners - ctx.exclusion_center, axis=1).max()
    return bool(dmax < ctx.exclusion_radius)


def maximize_scalar_field(
    value_fn: Callable[[np.ndarray], np.ndarray],
    ctx: AcquisitionContext,
    seed,
    n_starts: int = 32,
    n_prescreen: int = 512,
    max_rounds: int = 60,
    tol: float = 1e-6,
) -> tuple[np.ndarray, float]:
    """Maximize a cheap batched field over the box minus the exclusion ball.

    ``value_fn`` maps an (m, d) array to m values.  Deterministic given the
    seed; ties are resolved toward the lowest candidate index.
    """
    if _ball_covers_box(ctx):
        raise InfeasibleExclusionError(
            f"exclusion ball (radius {ctx.exclusion_radius:.3g}) covers the domain"
        )
    rng = np.random.default_rng(seed)
    d = ctx.domain.dim
    span = ctx.domain.upper - ctx.domain.lower

    def draw_feasible(k: int) -> np.ndarray:
        out = []
        need = k
        for _ in range(8):
            raw = ctx.domain.sample(rng, max(4 * need, 16))
            pts, ok = _map_candidates(raw, ctx)
            good = pts[ok]
            if good.size:
                out.append(good[:need])
                need -= out[-1].shape[0]
            if need <= 0:
                break
        if need > 0:
            raise InfeasibleExclusionError(
                "could not sample feasible points outside the exclusion ball"
            )
        return np.vstack(out)

    starts = draw_feasible(n_starts)
    screen = draw_feasible(n_prescreen)
    screen_vals = value_fn(screen)
    starts = np.vstack([screen[np.argmax(screen_vals)][None, :], starts])

    values = value_fn(starts)
    m = starts.shape[0]
    steps = np.full(m, 0.25)
    active = np.ones(m, dtype=bool)
    for _ in range(max_rounds):
        if not np.any(active):
            break
        # Nearly-converged starts that have collapsed into the same tiny
        # neighborhood are climbing the same local maximum; keep the one
        # with the largest remaining step (ties to the lowest index).
        live = np.nonzero(active)[0]
        keys = {}
        for i in live:
            if steps[i] >= 1e-4:
                continue
            key = tuple(np.round(starts[i] / (2e-4 * span)).astype(np.int64))
            j = keys.get(key)
            if j is None:
                keys[key] = i
            elif steps[i] > steps[j]:
                active[j] = False
                keys[key] = i
            else:
                active[i] = False
        idx = np.nonzero(active)[0]
        base = starts[idx]
        k = idx.size
        cand = np.repeat(base, 2 * d, axis=0)
        offsets = np.zeros((2 * d, d))
        for j in range(d):
            offsets[2 * j, j] = 1.0
            offsets[2 * j + 1, j] = -1.0
        cand += np.tile(offsets, (k, 1)) * (steps[idx].repeat(2 * d)[:, None] * span)
        cand, ok = _map_candidates(cand, ctx)
        vals = np.where(ok, value_fn(cand), _NEG_INF)
        vals = vals.reshape(k, 2 * d)
        best_j = np.argmax(vals, axis=1)
        best_v = vals[np.arange(k), best_j]
        improved = best_v > values[idx]
        moved = idx[improved]
        starts[moved] = cand.reshape(k, 2 * d, d)[improved, best_j[improved]]
        values[moved] = best_v[improved]
        stuck = idx[~improved]
        steps[stuck] *= 0.4
        active[stuck] = steps[stuck] >= tol
    best = int(np.argmax(values))
    return starts[best].copy(), float(values[best])


def maximize_outside_ball(
    model: GradientGpModel,
    ctx: AcquisitionContext,
    seed,
    n_starts: int = 32,
    n_prescreen: int = 512,
) -> tuple[np.ndarray, float]:
    """Maximize EI over the design box minus the exclusion ball.

    Returns the maximizing point (feasible by construction) and its EI.

    Raises
    ------
    InfeasibleExclusionError
        When the exclusion ball covers the entire box.
    """

    def ei_batch(points: np.ndarray) -> np.ndarray:
        means, variances = posterior_batch(model, points)
        return expected_improvement(means, np.sqrt(variances), ctx.f_best)

    x, val = maximize_scalar_field(ei_batch, ctx, seed, n_starts=n_starts,
                                   n_prescreen=n_prescreen)
    return x, val


def minimize_posterior_mean(
    model: GradientGpModel,
    domain: Box,
    seed,
    n_starts: int = 32,
    n_prescreen: int = 512,
) -> np.ndarray:
    """Global minimizer of the posterior mean over the box (no exclusion)."""
    ctx = AcquisitionContext(
        f_best=0.0,
        exclusion_center=0.5 * (domain.lower + domain.upper),
        exclusion_radius=0.0,
        domain=domain,
    )

    def neg_mean(points: np.ndarray) -> np.ndarray:
        means, _ = posterior_batch(model, points)
        return -means

    x, _ = maximize_scalar_field(neg_mean, ctx, seed, n_starts=n_starts,
                                 n_prescreen=n_prescreen)
    return x
