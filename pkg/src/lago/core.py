"""LAGO driver: global/local proposal competition on a per-iteration basis.

Each iteration proposes a global candidate (EI maximized outside the active
trust region) and a local candidate (trust-region subproblem step), compares
the global expected improvement against the gamma-scaled predicted local
improvement, and spends the single joint (f, grad f) evaluation of the
iteration on the winner.  Local evaluations flow into the global GP subject
to a lengthscale-based separation filter applied whenever the trust-region
center moves.

The trust region and/or the gradient channels can be disabled, which turns
the driver into plain gradient-enhanced BO or plain BO on the same budget
accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import gradient_gp as ggp
from . import trust_region as tr
from .acquisition import AcquisitionContext, maximize_outside_ball, minimize_posterior_mean
from .errors import InfeasibleExclusionError
from .kernels import KernelFamily, KernelHyper
from .problems import EvaluationLedger, Problem
from .problems import latin_hypercube

CHOICE_GLOBAL = "global"
CHOICE_LOCAL = "local"
CHOICE_TR_TERMINATED = "tr-terminated-global"

# Reference separation ratio used only for the filter-activation diagnostic
# recorded in the trace (conditioning ablation alignment).
_FILTER_REF_NU = 0.1


@dataclass
class LagoConfig:
    """All algorithm constants for one run.

    ``budget`` counts function-evaluation units; one joint (f, grad)
    evaluation costs 1 + gradient_cost units (1 when gradients are unused).
    Fields left at None get data-dependent defaults: delta0 and the
    trust-region reset use half the GP lengthscale, delta_max half the
    domain diagonal, n_init is 5d, and gradient_cost comes from the problem
    (d for the synthetic suite).
    """

    budget: int
    seed: int = 0
    gamma: float = 1.0
    nu: float = 0.1
    n_low_ei: int = 5
    eps_terminate: float = 1e-12
    eps_step: float = 1e-7
    eta: float = 5e-4
    sr1_guard: float = 1e-8
    delta0: Optional[float] = None
    delta_max: Optional[float] = None
    refit_period: int = 10
    n_init: Optional[int] = None
    gradient_cost: Optional[int] = None
    use_trust_region: bool = True
    use_gradients: bool = True
    kernel_family: KernelFamily = KernelFamily.MATERN72
    nugget: float = 1e-9
    acq_n_starts: int = 32
    acq_n_prescreen: int = 512

    def validate(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.n_low_ei <= 0 or self.refit_period <= 0:
            raise ValueError("n_low_ei and refit_period must be positive")
        if self.use_trust_region and not self.use_gradients:
            raise ValueError("the trust region requires gradient observations")
        if self.use_trust_region and self.kernel_family is not KernelFamily.MATERN72:
            raise ValueError(
                "trust-region initialization needs the posterior-mean Hessian; "
                "use the Matern 7/2 kernel"
            )


@dataclass
class IterationRecord:
    """One row of the run trace; exactly one evaluation per record."""

    iteration: int
    choice: str
    ei: float
    local_improvement: float
    point: np.ndarray
    f: float
    delta: float
    lengthscale: float
    cond: float
    cost: int
    accepted: Optional[bool] = None
    step_norm: float = math.nan
    filter_applied: bool = False
    filter_removed: int = 0
    filter_near_ref: int = 0


@dataclass
class LagoState:
    """Evolving run state: archive, filtered active set, TR, counters."""

    archive: list
    active: list
    model: ggp.GradientGpModel
    trust: Optional[tr.TrustRegionState]
    tr_terminated: bool
    f_best: float
    x_best: np.ndarray
    ledger: EvaluationLedger
    cost_per_eval: int
    consecutive_low_ei: int = 0
    last_local_improvement: float = math.inf
    iteration: int = 0
    _domain_diagonal: float = field(default=1.0, repr=False)


@dataclass
class RunResult:
    x_best: np.ndarray
    f_best: float
    trace: list
    archive: list
    ledger: EvaluationLedger
    cost_per_eval: int
    stopped_early: bool


def _child_seed(seed: int, *tags: int):
    return np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags))


def _evaluate(problem: Problem, x, state: LagoState) -> ggp.Observation:
    f, grad = problem.evaluate(np.asarray(x, dtype=float))
    obs = ggp.Observation(x=x, f=float(f), grad=grad, eval_index=len(state.archive))
    state.archive.append(obs)
    state.ledger.charge(obs.x, state.cost_per_eval)
    return obs


def select(ei_value: float, local_improvement: float, gamma: float) -> str:
    """Global wins only on strict inequality EI > gamma * I; ties go local."""
    return CHOICE_GLOBAL if ei_value > gamma * local_improvement else CHOICE_LOCAL


def apply_lengthscale_filter(active_set, center, lengthscale: float, nu: float):
    """Keep the center plus every point strictly farther than nu * lengthscale.

    Returns (filtered_list, n_removed, n_within_reference) where the last
    count is the number of non-center points within the reference separation
    0.1 * lengthscale (recorded for the conditioning-ablation alignment,
    independent of the run's own nu).
    """
    center = np.asarray(center, dtype=float).ravel()
    center_idx = None
    for i, o in enumerate(active_set):
        if np.array_equal(o.x, center):
            center_idx = i
            break
    if center_idx is None:
        raise ValueError("filter center must be an element of the active set")
    threshold = nu * lengthscale
    ref_threshold = _FILTER_REF_NU * lengthscale
    kept = [active_set[center_idx]]
    removed = 0
    near_ref = 0
    for i, o in enumerate(active_set):
        if i == center_idx:
            continue
        dist = float(np.linalg.norm(o.x - center))
        if dist <= ref_threshold:
            near_ref += 1
        if dist > threshold:
            kept.append(o)
        else:
            removed += 1
    return kept, removed, near_ref


def _condition_active(state: LagoState):
    state.model = ggp.condition(state.model, state.active)


def _refit(state: LagoState, seed):
    # Periodic refits warm-start from the current optimum; the likelihood
    # surface drifts slowly between refits, so two starts and a modest
    # iteration cap suffice (the initial fit uses the full eight).
    hyper = ggp.fit_hyperparameters(
        state.model, domain_diagonal=state._domain_diagonal,
        seed=seed, n_starts=2, maxiter=20,
    )
    state.model = ggp.condition(replace(state.model, hyper=hyper), state.active)


def _tr_radius_cap(state: LagoState) -> float:
    return state.trust.max_radius if state.trust is not None else math.inf


def _relocate_trust_region(state: LagoState, center_obs: ggp.Observation,
                           nu: float):
    """Re-center the trust region on a new incumbent: filter the active set
    around it, recondition, and rebuild the Hessian from the GP."""
    ell = state.model.hyper.lengthscale
    kept, removed, near_ref = apply_lengthscale_filter(
        state.active, center_obs.x, ell, nu
    )
    state.active = kept
    _condition_active(state)
    q = ggp.posterior(state.model, center_obs.x, want_hessian=True)
    delta_max = _tr_radius_cap(state)
    state.trust = tr.TrustRegionState(
        center=center_obs.x,
        radius=min(0.5 * ell, delta_max),
        max_radius=delta_max,
        hessian=q.mean_hessian,
        f_center=center_obs.f,
        grad_center=center_obs.grad,
    )
    state.tr_terminated = False
    return removed, near_ref


def initialize(problem: Problem, config: LagoConfig) -> LagoState:
    """Evaluate the initial design plus the GP-informed first candidate and
    set up the trust region at the incumbent."""
    config.validate()
    d = problem.dim
    if config.use_gradients:
        cost_per_eval = 1 + problem.resolve_gradient_cost(config.gradient_cost)
    else:
        cost_per_eval = 1
    n_init = config.n_init if config.n_init is not None else 5 * d
    if n_init < 1:
        raise ValueError("initial design must contain at least one point")
    init_cost = (n_init + 1) * cost_per_eval
    if init_cost > config.budget:
        raise ValueError(
            f"budget {config.budget} cannot cover initialization cost {init_cost}"
        )

    domain = problem.domain
    state = LagoState(
        archive=[], active=[], model=None, trust=None, tr_terminated=False,
        f_best=math.inf, x_best=None, ledger=EvaluationLedger(),
        cost_per_eval=cost_per_eval, _domain_diagonal=domain.diagonal,
    )
    design = latin_hypercube(domain, n_init, seed=_child_seed(config.seed, 0))
    for x in design:
        _evaluate(problem, x, state)

    prior_mean = float(np.mean([o.f for o in state.archive]))
    f_span = float(np.std([o.f for o in state.archive]))
    base = ggp.GradientGpModel(
        hyper=KernelHyper(lengthscale=0.25 * domain.diagonal,
                          variance=max(f_span ** 2, 1.0)),
        family=config.kernel_family,
        nugget=config.nugget,
        prior_mean=prior_mean,
        with_gradients=config.use_gradients,
    )
    state.model = ggp.condition(base, state.archive)
    hyper = ggp.fit_hyperparameters(
        state.model, domain_diagonal=domain.diagonal,
        seed=_child_seed(config.seed, 5),
    )
    state.model = ggp.condition(replace(state.model, hyper=hyper), state.archive)

    x_informed = minimize_posterior_mean(
        state.model, domain, seed=_child_seed(config.seed, 3),
        n_starts=config.acq_n_starts, n_prescreen=config.acq_n_prescreen,
    )
    _evaluate(problem, x_informed, state)

    state.active = list(state.archive)
    _condition_active(state)

    best = min(state.archive, key=lambda o: o.f)
    state.f_best = best.f
    state.x_best = best.x
    if config.use_trust_region:
        ell = state.model.hyper.lengthscale
        delta_max = config.delta_max if config.delta_max is not None \
            else 0.5 * domain.diagonal
        delta0 = config.delta0 if config.delta0 is not None else 0.5 * ell
        q = ggp.posterior(state.model, best.x, want_hessian=True)
        state.trust = tr.TrustRegionState(
            center=best.x,
            radius=min(delta0, delta_max),
            max_radius=delta_max,
            hessian=q.mean_hessian,
            f_center=best.f,
            grad_center=best.grad,
        )
    return state


def _global_proposal(state: LagoState, problem: Problem, config: LagoConfig,
                     iteration: int, radius: float):
    if state.trust is not None:
        center = state.trust.center
    else:
        center = 0.5 * (problem.domain.lower + problem.domain.upper)
    ctx = AcquisitionContext(
        f_best=state.f_best,
        exclusion_center=center,
        exclusion_radius=radius,
        domain=problem.domain,
    )
    return maximize_outside_ball(
        state.model, ctx, seed=_child_seed(config.seed, 7, iteration),
        n_starts=config.acq_n_starts, n_prescreen=config.acq_n_prescreen,
    )


def step(state: LagoState, problem: Problem, config: LagoConfig):
    """Run one iteration: propose, select, evaluate once, assimilate.

    Returns (state, record); the state object is updated in place.
    """
    t = state.iteration + 1
    if t % config.refit_period == 0:
        _refit(state, seed=_child_seed(config.seed, 11, t))

    exclusion = state.trust.radius if state.trust is not None else 0.0
    infeasible = False
    x_g = ei = None
    try:
        x_g, ei = _global_proposal(state, problem, config, t, exclusion)
    except InfeasibleExclusionError:
        infeasible = True

    local_improvement = math.nan
    s_step = None
    model_dec = None
    if config.use_trust_region and not (state.tr_terminated or infeasible):
        s_step, model_dec = tr.solve_subproblem(
            state.trust.grad_center, state.trust.hessian, state.trust.radius
        )
        local_improvement = model_dec

    accepted = None
    step_norm = math.nan
    filt = (False, 0, 0)

    if config.use_trust_region and (state.tr_terminated or infeasible):
        # Trust region terminated (or its ball swallowed the box): reset the
        # radius to half the lengthscale and spend the evaluation globally.
        ell = state.model.hyper.lengthscale
        new_radius = min(0.5 * ell, state.trust.max_radius)
        state.trust = replace(state.trust, radius=new_radius)
        state.tr_terminated = False
        if infeasible:
            try:
                x_g, ei = _global_proposal(state, problem, config, t, new_radius)
            except InfeasibleExclusionError:
                x_g, ei = _global_proposal(state, problem, config, t, 0.0)
        obs = _evaluate(problem, x_g, state)
        state.active.append(obs)
        _condition_active(state)
        if obs.f < state.f_best:
            filt = (True,) + _relocate_trust_region(state, obs, config.nu)
        choice = CHOICE_TR_TERMINATED
    elif (not config.use_trust_region) or select(ei, local_improvement,
                                                 config.gamma) == CHOICE_GLOBAL:
        obs = _evaluate(problem, x_g, state)
        state.active.append(obs)
        _condition_active(state)
        if config.use_trust_region and obs.f < state.f_best:
            filt = (True,) + _relocate_trust_region(state, obs, config.nu)
        choice = CHOICE_GLOBAL
    else:
        x_l = state.trust.center + s_step
        obs = _evaluate(problem, x_l, state)
        state.active.append(obs)
        outcome = tr.tr_step(
            state.trust, obs.f, obs.grad, s_step, model_dec,
            eta=config.eta, r=config.sr1_guard,
        )
        state.trust = outcome.new_state
        accepted = outcome.accepted
        step_norm = outcome.step_norm
        if outcome.accepted:
            ell = state.model.hyper.lengthscale
            kept, removed, near_ref = apply_lengthscale_filter(
                state.active, state.trust.center, ell, config.nu
            )
            state.active = kept
            filt = (True, removed, near_ref)
            if outcome.step_norm <= config.eps_step:
                state.tr_terminated = True
        _condition_active(state)
        choice = CHOICE_LOCAL

    if obs.f < state.f_best:
        state.f_best = obs.f
        state.x_best = obs.x

    if ei is not None:
        if ei < config.eps_terminate:
            state.consecutive_low_ei += 1
        else:
            state.consecutive_low_ei = 0
    if not math.isnan(local_improvement):
        state.last_local_improvement = local_improvement

    state.iteration = t
    record = IterationRecord(
        iteration=t,
        choice=choice,
        ei=float(ei),
        local_improvement=local_improvement,
        point=obs.x,
        f=obs.f,
        delta=state.trust.radius if state.trust is not None else math.nan,
        lengthscale=state.model.hyper.lengthscale,
        cond=ggp.condition_number(state.model),
        cost=state.ledger.function_units,
        accepted=accepted,
        step_norm=step_norm,
        filter_applied=filt[0],
        filter_removed=filt[1],
        filter_near_ref=filt[2],
    )
    return state, record


def check_early_stop(state: LagoState, config: LagoConfig) -> bool:
    """Stop only when N consecutive global candidates had EI below the
    threshold and the latest predicted local improvement is also below it."""
    return (
        state.consecutive_low_ei >= config.n_low_ei
        and state.last_local_improvement < config.eps_terminate
    )


def run(problem: Problem, config: LagoConfig) -> RunResult:
    """Full optimization run: initialize, iterate until the budget cannot
    cover another evaluation or the early-stopping test fires."""
    state = initialize(problem, config)
    trace = []
    stopped_early = False
    while state.ledger.function_units + state.cost_per_eval <= config.budget:
        if state.iteration >= 1 and check_early_stop(state, config):
            stopped_early = True
            break
        _, record = step(state, problem, config)
        trace.append(record)
    return RunResult(
        x_best=state.x_best, f_best=state.f_best, trace=trace,
        archive=list(state.archive), ledger=state.ledger,
        cost_per_eval=state.cost_per_eval, stopped_early=stopped_early,
    )
