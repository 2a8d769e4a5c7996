"""Matern covariance functions with analytic derivative blocks.

Implements the half-integer Matern kernels

    Matern 5/2: k(r) = s2 * (1 + t + t^2/3) * exp(-t),           t = sqrt(5) r / l
    Matern 7/2: k(r) = s2 * (1 + t + 2 t^2/5 + t^3/15) * exp(-t), t = sqrt(7) r / l

together with every cross-derivative block needed to condition a Gaussian
process jointly on function values and gradients, and (for Matern 7/2) the
second-derivative blocks needed for the Hessian of the posterior mean.

All derivatives are taken through the squared distance u = ||x - x'||^2,
which keeps the expressions finite at coincident points.  Writing
k = s2 * g(u), the required radial profiles are

    Matern 5/2: g'(u) = -(c^2/6)  (1 + t) e^{-t}
                g''(u) =  (c^4/12) e^{-t}
    Matern 7/2: g'(u) = -(c^2/10) (1 + t + t^2/3) e^{-t}
                g''(u) =  (c^4/60) (1 + t) e^{-t}
                g'''(u) = -(c^6/120) e^{-t}

with c = sqrt(5)/l resp. sqrt(7)/l and t = c sqrt(u).  The third profile
derivative does not exist at u = 0 for Matern 5/2, which is why only the
7/2 family supports posterior-mean Hessians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedSmoothnessError


class KernelFamily(enum.Enum):
    """Smoothness order of the Matern kernel."""

    MATERN52 = "matern52"
    MATERN72 = "matern72"


@dataclass(frozen=True)
class KernelHyper:
    """Isotropic kernel hyperparameters: one lengthscale, one output scale."""

    lengthscale: float
    variance: float

    def __post_init__(self):
        if not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be positive, got {self.variance}")


def _c(hyper: KernelHyper, family: KernelFamily) -> float:
    root = math.sqrt(5.0) if family is KernelFamily.MATERN52 else math.sqrt(7.0)
    return root / hyper.lengthscale


def radial_profiles(u, hyper: KernelHyper, family: KernelFamily, order: int):
    """Derivatives of g(u) with k = variance * g(||x - x'||^2).

    Parameters
    ----------
    u : array_like
        Squared distances, any shape.
    order : int
        Highest derivative requested (0..3).

    Returns
    -------
    tuple of ndarray
        (g, g', ..., g^(order)) evaluated elementwise on ``u``.
    """
    if order >= 3 and family is not KernelFamily.MATERN72:
        raise UnsupportedSmoothnessError(
            "third radial derivative requires the Matern 7/2 kernel"
        )
    u = np.asarray(u, dtype=float)
    c = _c(hyper, family)
    t = c * np.sqrt(np.maximum(u, 0.0))
    e = np.exp(-t)
    out = []
    if family is KernelFamily.MATERN52:
        out.append((1.0 + t + t * t / 3.0) * e)
        if order >= 1:
            out.append(-(c * c / 6.0) * (1.0 + t) * e)
        if order >= 2:
            out.append((c ** 4 / 12.0) * e)
    else:
        out.append((1.0 + t + 0.4 * t * t + t ** 3 / 15.0) * e)
        if order >= 1:
            out.append(-(c * c / 10.0) * (1.0 + t + t * t / 3.0) * e)
        if order >= 2:
            out.append((c ** 4 / 60.0) * (1.0 + t) * e)
        if order >= 3:
            out.append(-(c ** 6 / 120.0) * e)
    return tuple(out)


def _as_points(x, xp):
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    if x.shape != xp.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {xp.shape[0]}")
    return x, xp


def kernel_value(x, xp, hyper: KernelHyper, family: KernelFamily) -> float:
    """Covariance k(x, x') of the function values at two points."""
    x, xp = _as_points(x, xp)
    d = x - xp
    (g,) = radial_profiles(d @ d, hyper, family, order=0)
    return hyper.variance * float(g)


def kernel_joint_block(x, xp, hyper: KernelHyper, family: KernelFamily) -> np.ndarray:
    """Joint covariance block of [f, grad f] at x against [f, grad f] at x'.

    Returns the (d+1) x (d+1) matrix

        [[ k,            (grad_{x'} k)^T ],
         [ grad_x k,     grad_x grad_{x'}^T k ]]

    which satisfies ``kernel_joint_block(x, xp) == kernel_joint_block(xp, x).T``.
    """
    x, xp = _as_points(x, xp)
    d = x.shape[0]
    delta = x - xp
    g, g1, g2 = radial_profiles(delta @ delta, hyper, family, order=2)
    s2 = hyper.variance
    block = np.empty((d + 1, d + 1))
    block[0, 0] = s2 * g
    grad_x = 2.0 * s2 * g1 * delta
    block[1:, 0] = grad_x
    block[0, 1:] = -grad_x
    block[1:, 1:] = -2.0 * s2 * (g1 * np.eye(d) + 2.0 * g2 * np.outer(delta, delta))
    return block


def kernel_hessian_row(x, xp, hyper: KernelHyper, family: KernelFamily) -> np.ndarray:
    """Hessian in x of each entry of the joint row [k(x,x'), grad_{x'} k(x,x')^T].

    Returns a (d, d, d+1) tensor ``h`` with ``h[:, :, 0]`` the Hessian of
    k(x, x') and ``h[:, :, 1+j]`` the Hessian of dk/dx'_j; these are the
    blocks needed to assemble the Hessian of the GP posterior mean.

    Only Matern 7/2 is smooth enough at coincident points.
    """
    if family is not KernelFamily.MATERN72:
        raise UnsupportedSmoothnessError(
            "posterior-mean Hessian blocks require the Matern 7/2 kernel"
        )
    x, xp = _as_points(x, xp)
    d = x.shape[0]
    delta = x - xp
    g, g1, g2, g3 = radial_profiles(delta @ delta, hyper, family, order=3)
    s2 = hyper.variance
    eye = np.eye(d)
    dd = np.outer(delta, delta)
    out = np.empty((d, d, d + 1))
    # Hess_x k = 2 s2 (g' I + 2 g'' delta delta^T)
    out[:, :, 0] = 2.0 * s2 * (g1 * eye + 2.0 * g2 * dd)
    # Hess_x dk/dx'_j = -8 s2 g''' delta_j delta delta^T
    #                   -4 s2 g'' (delta_j I + e_j delta^T + delta e_j^T)
    sym = (
        delta[None, None, :] * eye[:, :, None]
        + delta[:, None, None] * eye[None, :, :]
        + delta[None, :, None] * eye[:, None, :]
    )
    out[:, :, 1:] = -8.0 * s2 * g3 * dd[:, :, None] * delta[None, None, :] - 4.0 * s2 * g2 * sym
    return out


# ---------------------------------------------------------------------------
# Vectorized builders used by the gradient-enhanced GP.  These produce the
# same numbers as the pairwise operations above, assembled in bulk.
# ---------------------------------------------------------------------------


def joint_train_matrix(X: np.ndarray, hyper: KernelHyper, family: KernelFamily) -> np.ndarray:
    """Full joint kernel matrix over n training points, shape (n(d+1), n(d+1)).

    Rows/columns are grouped per observation as [f_i, df_i/dx_1, ..., df_i/dx_d].
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    delta = X[:, None, :] - X[None, :, :]
    u = np.einsum("ijk,ijk->ij", delta, delta)
    g, g1, g2 = radial_profiles(u, hyper, family, order=2)
    s2 = hyper.variance
    blocks = np.empty((n, d + 1, n, d + 1))
    blocks[:, 0, :, 0] = s2 * g
    grad_x = 2.0 * s2 * g1[:, :, None] * delta
    blocks[:, 1:, :, 0] = np.moveaxis(grad_x, 2, 1)
    blocks[:, 0, :, 1:] = -grad_x
    hess = -2.0 * s2 * (
        g1[:, :, None, None] * np.eye(d)[None, None, :, :]
        + 2.0 * g2[:, :, None, None] * delta[:, :, :, None] * delta[:, :, None, :]
    )
    blocks[:, 1:, :, 1:] = np.moveaxis(hess, 2, 1)
    return blocks.reshape(n * (d + 1), n * (d + 1))


def value_train_matrix(X: np.ndarray, hyper: KernelHyper, family: KernelFamily) -> np.ndarray:
    """Function-value-only kernel matrix, shape (n, n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    delta = X[:, None, :] - X[None, :, :]
    u = np.einsum("ijk,ijk->ij", delta, delta)
    (g,) = radial_profiles(u, hyper, family, order=0)
    return hyper.variance * g


def cross_f_rows(
    Xq: np.ndarray, X: np.ndarray, hyper: KernelHyper, family: KernelFamily,
    with_gradients: bool,
) -> np.ndarray:
    """Covariance of f at query points against the training channels.

    Returns shape (m, n(d+1)) when the model carries gradient channels and
    (m, n) otherwise; one row per query point.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, d = Xq.shape
    n = X.shape[0]
    delta = Xq[:, None, :] - X[None, :, :]
    u = np.einsum("ijk,ijk->ij", delta, delta)
    if not with_gradients:
        (g,) = radial_profiles(u, hyper, family, order=0)
        return hyper.variance * g
    g, g1 = radial_profiles(u, hyper, family, order=1)
    s2 = hyper.variance
    rows = np.empty((m, n, d + 1))
    rows[:, :, 0] = s2 * g
    rows[:, :, 1:] = -2.0 * s2 * g1[:, :, None] * delta  # cov(f(xq), grad f(xi))
    return rows.reshape(m, n * (d + 1))


def cross_joint_rows(
    xq: np.ndarray, X: np.ndarray, hyper: KernelHyper, family: KernelFamily,
    with_gradients: bool,
) -> np.ndarray:
    """Covariance of [f, grad f] at one query point against training channels.

    Returns shape (d+1, n(d+1)) (or (d+1, n) without gradient channels); the
    first row equals ``cross_f_rows`` for the same point.
    """
    xq = np.asarray(xq, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    delta = xq[None, :] - X
    u = np.einsum("ij,ij->i", delta, delta)
    g, g1, g2 = radial_profiles(u, hyper, family, order=2)
    s2 = hyper.variance
    if not with_gradients:
        rows = np.empty((d + 1, n))
        rows[0, :] = s2 * g
        rows[1:, :] = (2.0 * s2 * g1[:, None] * delta).T  # cov(grad f(xq), f(xi))
        return rows
    blocks = np.empty((d + 1, n, d + 1))
    blocks[0, :, 0] = s2 * g
    grad_q = 2.0 * s2 * g1[:, None] * delta
    blocks[0, :, 1:] = -grad_q
    blocks[1:, :, 0] = grad_q.T
    hess = -2.0 * s2 * (
        g1[:, None, None] * np.eye(d)[None, :, :]
        + 2.0 * g2[:, None, None] * delta[:, :, None] * delta[:, None, :]
    )
    blocks[1:, :, 1:] = np.moveaxis(hess, 1, 0)
    return blocks.reshape(d + 1, n * (d + 1))


def hessian_rows(
    xq: np.ndarray, X: np.ndarray, hyper: KernelHyper, family: KernelFamily,
    with_gradients: bool,
) -> np.ndarray:
    """Stacked Hessian blocks of the query row against every training channel.

    Returns shape (d, d, n(d+1)) (or (d, d, n)), i.e. ``kernel_hessian_row``
    against each training point, laid out to contract directly with the GP
    weight vector.
    """
    if family is not KernelFamily.MATERN72:
        raise UnsupportedSmoothnessError(
            "posterior-mean Hessian blocks require the Matern 7/2 kernel"
        )
    xq = np.asarray(xq, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    delta = xq[None, :] - X
    u = np.einsum("ij,ij->i", delta, delta)
    g, g1, g2, g3 = radial_profiles(u, hyper, family, order=3)
    s2 = hyper.variance
    eye = np.eye(d)
    dd = delta[:, :, None] * delta[:, None, :]
    hess_k = 2.0 * s2 * (g1[:, None, None] * eye + 2.0 * g2[:, None, None] * dd)
    if not with_gradients:
        return np.moveaxis(hess_k, 0, 2)
    sym = (
        delta[:, None, None, :] * eye[None, :, :, None]
        + delta[:, :, None, None] * eye[None, None, :, :]
        + delta[:, None, :, None] * eye[None, :, None, :]
    )
    out = np.empty((n, d, d, d + 1))
    out[:, :, :, 0] = hess_k
    out[:, :, :, 1:] = (
        -8.0 * s2 * g3[:, None, None, None] * dd[:, :, :, None] * delta[:, None, None, :]
        - 4.0 * s2 * g2[:, None, None, None] * sym
    )
    return np.moveaxis(out.reshape(n, d, d, d + 1), 0, 2).reshape(d, d, n * (d + 1))
