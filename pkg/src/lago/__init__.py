"""Hybrid global/local optimization: gradient-enhanced Bayesian optimization
competing per-iteration with an SR1 trust-region method."""

from .acquisition import (
    AcquisitionContext,
    expected_improvement,
    maximize_outside_ball,
    minimize_posterior_mean,
)
from .core import (
    IterationRecord,
    LagoConfig,
    LagoState,
    RunResult,
    apply_lengthscale_filter,
    check_early_stop,
    initialize,
    run,
    select,
    step,
)
from .errors import (
    IllConditionedKernelError,
    InfeasibleExclusionError,
    UnsupportedSmoothnessError,
)
from .gradient_gp import (
    GradientGpModel,
    Observation,
    PosteriorQuery,
    condition,
    condition_number,
    fit_hyperparameters,
    neg_log_marginal_likelihood,
    posterior,
    posterior_batch,
)
from .kernels import (
    KernelFamily,
    KernelHyper,
    kernel_hessian_row,
    kernel_joint_block,
    kernel_value,
)
from .pde import (
    FemSystem,
    Mesh,
    PdeSourceSpec,
    assemble,
    build_mesh,
    make_pde_problem,
    reduced_cost_and_gradient,
    solve_adjoint,
    solve_state,
)
from .problems import (
    Box,
    EvaluationLedger,
    Problem,
    gradient_check,
    latin_hypercube,
    make_problem,
    suite_names,
)
from .trust_region import (
    TrStepOutcome,
    TrustRegionState,
    improvement_ratio,
    kkt_residuals,
    quadratic_model,
    solve_subproblem,
    sr1_update,
    tr_step,
)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionContext", "expected_improvement", "maximize_outside_ball",
    "minimize_posterior_mean", "IterationRecord", "LagoConfig", "LagoState",
    "RunResult", "apply_lengthscale_filter", "check_early_stop", "initialize",
    "run", "select", "step", "IllConditionedKernelError",
    "InfeasibleExclusionError", "UnsupportedSmoothnessError",
    "GradientGpModel", "Observation", "PosteriorQuery", "condition",
    "condition_number", "fit_hyperparameters", "neg_log_marginal_likelihood",
    "posterior", "posterior_batch", "KernelFamily", "KernelHyper",
    "kernel_hessian_row", "kernel_joint_block", "kernel_value", "FemSystem",
    "Mesh", "PdeSourceSpec", "assemble", "build_mesh", "make_pde_problem",
    "reduced_cost_and_gradient", "solve_adjoint", "solve_state", "Box",
    "EvaluationLedger", "Problem", "gradient_check", "latin_hypercube",
    "make_problem", "suite_names", "TrStepOutcome", "TrustRegionState",
    "improvement_ratio", "kkt_residuals", "quadratic_model",
    "solve_subproblem", "sr1_update", "tr_step",
]
