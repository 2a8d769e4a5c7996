"""Gradient-enhanced Gaussian-process regression.

Conditions a GP jointly on function values and gradients, answers posterior
queries (mean, variance, posterior-mean gradient and Hessian), fits the two
kernel hyperparameters by maximum likelihood, and reports the conditioning
of the joint kernel matrix.

The joint observation vector stacks [f_i, grad f_i] per point; the prior
mean of the function channel is a constant and the gradient channel's prior
mean is zero.  A model may also be built without gradient channels, in which
case it degrades to a plain GP on function values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import kernels
from .errors import IllConditionedKernelError
from .kernels import KernelFamily, KernelHyper

DEFAULT_NUGGET = 1e-9

# MLE search box, in log10 units relative to the data scales (see
# fit_hyperparameters).
_LOG10_LENGTHSCALE_RANGE = (-2.0, 1.0)
_LOG10_VARIANCE_RANGE = (-4.0, 6.0)
_NLML_PENALTY = 1e300
# Hyperparameter candidates whose Cholesky factor indicates conditioning
# beyond this are rejected during fitting: their likelihood is numerically
# meaningless and accepting them leaves the model one observation away from
# a factorization failure.
_FIT_CONDITION_LIMIT = 1e13
# Escalating relative jitter tried when the nugget alone cannot make the
# matrix factorizable (e.g. duplicate evaluation points).
_JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class Observation:
    """One evaluated point: location, value, gradient, acquisition order."""

    x: np.ndarray
    f: float
    grad: np.ndarray
    eval_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "grad", np.asarray(self.grad, dtype=float).ravel())
        if self.grad.shape != self.x.shape:
            raise ValueError(
                f"gradient length {self.grad.shape[0]} != point dimension {self.x.shape[0]}"
            )
        if not (np.isfinite(self.f) and np.all(np.isfinite(self.grad))):
            raise ValueError("observation value and gradient must be finite")


@dataclass(frozen=True)
class PosteriorQuery:
    """Posterior of f at one point; gradient/Hessian of the mean on request."""

    mean: float
    variance: float
    mean_grad: Optional[np.ndarray] = None
    mean_hessian: Optional[np.ndarray] = None


@dataclass(frozen=True)
class GradientGpModel:
    """GP conditioned on (value, gradient) observations.

    Immutable: ``condition`` and hyperparameter updates return new models.
    The Cholesky factor of the regularized joint kernel matrix and the
    weight vector are cached and stay consistent with ``active_set``.
    """

    hyper: KernelHyper
    family: KernelFamily = KernelFamily.MATERN72
    nugget: float = DEFAULT_NUGGET
    prior_mean: float = 0.0
    with_gradients: bool = True
    active_set: tuple = field(default=())
    _chol: Optional[np.ndarray] = field(default=None, repr=False)
    _alpha: Optional[np.ndarray] = field(default=None, repr=False)
    _gram: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.active_set)

    @property
    def dim(self) -> int:
        if not self.active_set:
            raise ValueError("model holds no observations")
        return self.active_set[0].x.shape[0]

    @property
    def points(self) -> np.ndarray:
        return np.array([o.x for o in self.active_set])

    def _check_conditioned(self):
        if self._chol is None:
            raise ValueError("model is not conditioned on any data")


def _stack_residual(dataset: Sequence[Observation], prior_mean: float,
                    with_gradients: bool) -> np.ndarray:
    if with_gradients:
        return np.concatenate(
            [np.concatenate(([o.f - prior_mean], o.grad)) for o in dataset]
        )
    return np.array([o.f - prior_mean for o in dataset])


def _build_gram(X: np.ndarray, hyper: KernelHyper, family: KernelFamily,
                nugget: float, with_gradients: bool) -> np.ndarray:
    if with_gradients:
        K = kernels.joint_train_matrix(X, hyper, family)
    else:
        K = kernels.value_train_matrix(X, hyper, family)
    if nugget:
        K = K + nugget * np.eye(K.shape[0])
    return K


def condition(model: GradientGpModel, dataset: Sequence[Observation]) -> GradientGpModel:
    """Condition the model on a dataset, returning a new model.

    If the nugget alone cannot regularize the matrix (duplicate points,
    degenerate hyperparameters), a small relative jitter is escalated
    before giving up.

    Raises
    ------
    IllConditionedKernelError
        If the symmetric factorization fails even at the top of the jitter
        ladder; carries the condition-number estimate.
    """
    dataset = tuple(dataset)
    if not dataset:
        raise ValueError("dataset must be non-empty")
    d = dataset[0].x.shape[0]
    if any(o.x.shape[0] != d for o in dataset):
        raise ValueError("observations have inconsistent dimensions")
    X = np.array([o.x for o in dataset])
    K = _build_gram(X, model.hyper, model.family, model.nugget, model.with_gradients)
    scale = float(np.mean(np.diag(K)))
    L = None
    for rel in _JITTER_LADDER:
        Kj = K if rel == 0.0 else K + (rel * scale) * np.eye(K.shape[0])
        try:
            L = np.linalg.cholesky(Kj)
            K = Kj
            break
        except np.linalg.LinAlgError:
            continue
    if L is None:
        eigs = np.linalg.eigvalsh(K)
        mn = float(eigs.min())
        cond = math.inf if mn <= 0 else float(eigs.max() / mn)
        raise IllConditionedKernelError(
            f"joint kernel factorization failed (n={len(dataset)}, cond~{cond:.3e})",
            condition_estimate=cond,
        )
    r = _stack_residual(dataset, model.prior_mean, model.with_gradients)
    alpha = cho_solve((L, True), r)
    return replace(model, active_set=dataset, _chol=L, _alpha=alpha, _gram=K)


def posterior(model: GradientGpModel, x, want_grad: bool = False,
              want_hessian: bool = False) -> PosteriorQuery:
    """Posterior mean/variance of f at x, optionally with the mean's
    gradient and Hessian.

    The gradient and Hessian are those of the posterior-mean surface, which
    for the joint prior coincide with the posterior means of grad f and of
    the corresponding derivative channels.
    """
    model._check_conditioned()
    x = np.asarray(x, dtype=float).ravel()
    X = model.points
    if want_grad or want_hessian:
        rows = kernels.cross_joint_rows(x, X, model.hyper, model.family,
                                        model.with_gradients)
        f_row = rows[0]
    else:
        f_row = kernels.cross_f_rows(x[None, :], X, model.hyper, model.family,
                                     model.with_gradients)[0]
    mean = model.prior_mean + float(f_row @ model._alpha)
    v = solve_triangular(model._chol, f_row, lower=True, check_finite=False)
    # Latent-f variance: the nugget is observation noise, not prior variance.
    variance = max(0.0, model.hyper.variance - float(v @ v))
    mean_grad = None
    mean_hessian = None
    if want_grad or want_hessian:
        mean_grad = rows[1:] @ model._alpha
    if want_hessian:
        hrows = kernels.hessian_rows(x, X, model.hyper, model.family,
                                     model.with_gradients)
        H = hrows.reshape(x.size * x.size, -1) @ model._alpha
        H = H.reshape(x.size, x.size)
        mean_hessian = 0.5 * (H + H.T)
    return PosteriorQuery(mean=mean, variance=variance, mean_grad=mean_grad,
                          mean_hessian=mean_hessian)


def posterior_batch(model: GradientGpModel, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances of f at a batch of points.

    Returns (means, variances), each of shape (m,).  Variances are clamped
    at zero.
    """
    model._check_conditioned()
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    rows = kernels.cross_f_rows(Xq, model.points, model.hyper, model.family,
                                model.with_gradients)
    means = model.prior_mean + rows @ model._alpha
    V = solve_triangular(model._chol, rows.T, lower=True, check_finite=False)
    variances = np.maximum(
        0.0, model.hyper.variance - np.einsum("ij,ij->j", V, V)
    )
    return means, variances


def neg_log_marginal_likelihood(model: GradientGpModel,
                                hyper: KernelHyper) -> float:
    """Negative log marginal likelihood of the model's dataset under
    candidate hyperparameters.

    Returns a large penalty value when the candidate's kernel matrix cannot
    be factorized, so hyperparameter searches simply skip it.
    """
    if not model.active_set:
        raise ValueError("dataset must be non-empty")
    X = model.points
    K = _build_gram(X, hyper, model.family, model.nugget, model.with_gradients)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return _NLML_PENALTY
    diag = np.diag(L)
    if (diag.max() / diag.min()) ** 2 > _FIT_CONDITION_LIMIT:
        return _NLML_PENALTY
    r = _stack_residual(model.active_set, model.prior_mean, model.with_gradients)
    v = solve_triangular(L, r, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    m = K.shape[0]
    nlml = 0.5 * float(v @ v) + 0.5 * logdet + 0.5 * m * math.log(2.0 * math.pi)
    return nlml if math.isfinite(nlml) else _NLML_PENALTY


def fit_hyperparameters(model: GradientGpModel, domain_diagonal: Optional[float] = None,
                        seed=0, n_starts: int = 8, maxiter: int = 40) -> KernelHyper:
    """MLE fit of (lengthscale, variance) by seeded multi-start local search.

    The search runs in log10 space over a box tied to the data scales:
    lengthscale within [1e-2, 1e1] times ``domain_diagonal`` (the bounding
    box diagonal of the data when not given) and variance within
    [1e-4, 1e6] times the empirical variance of the observed values.

    Falls back to the model's current hyperparameters (with a warning) if
    every start fails to produce a finite objective.
    """
    if not model.active_set:
        raise ValueError("dataset must be non-empty")
    X = model.points
    if domain_diagonal is None:
        span = X.max(axis=0) - X.min(axis=0)
        domain_diagonal = float(np.linalg.norm(span))
    if domain_diagonal <= 0:
        domain_diagonal = 1.0
    fvals = np.array([o.f for o in model.active_set])
    f_var = float(np.var(fvals))
    if f_var <= 0:
        f_var = 1.0

    lo = np.array([
        _LOG10_LENGTHSCALE_RANGE[0] + math.log10(domain_diagonal),
        _LOG10_VARIANCE_RANGE[0] + math.log10(f_var),
    ])
    hi = np.array([
        _LOG10_LENGTHSCALE_RANGE[1] + math.log10(domain_diagonal),
        _LOG10_VARIANCE_RANGE[1] + math.log10(f_var),
    ])

    def objective(theta):
        hyper = KernelHyper(lengthscale=10.0 ** theta[0], variance=10.0 ** theta[1])
        return neg_log_marginal_likelihood(model, hyper)

    rng = np.random.default_rng(seed)
    starts = lo + (hi - lo) * rng.random((n_starts, 2))
    # Always try the current hyperparameters as a warm start when they fall
    # inside the box.
    warm = np.array([math.log10(model.hyper.lengthscale),
                     math.log10(model.hyper.variance)])
    if np.all(warm >= lo) and np.all(warm <= hi):
        starts[0] = warm

    best_theta = None
    best_val = math.inf
    for theta0 in starts:
        res = minimize(objective, theta0, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)),
                       options={"maxiter": maxiter, "ftol": 1e-9})
        if math.isfinite(res.fun) and res.fun < min(best_val, _NLML_PENALTY):
            best_val = res.fun
            best_theta = res.x
    if best_theta is None:
        warnings.warn("hyperparameter fit failed for every start; keeping "
                      "previous values", RuntimeWarning)
        return model.hyper
    return KernelHyper(lengthscale=10.0 ** best_theta[0],
                       variance=10.0 ** best_theta[1])


def condition_number(model: GradientGpModel) -> float:
    """Spectral condition number of the regularized joint kernel matrix
    actually factorized for this model.

    Computed by full symmetric eigendecomposition; returns inf when the
    smallest eigenvalue is non-positive.
    """
    model._check_conditioned()
    eigs = np.linalg.eigvalsh(model._gram)
    mn = float(eigs.min())
    if mn <= 0.0:
        return math.inf
    return float(eigs.max() / mn)
