"""Command-line experiment runner.

Subcommands
-----------
run                  seeded multi-run campaign on one problem/mode
ablate-gamma         campaigns over a list of gamma values, shared designs
ablate-conditioning  event-aligned kernel conditioning with/without filter
gradcheck            finite-difference check of the analytic gradients
list-problems        available problems

Artifacts are flat text: a key=value config snapshot, one trace CSV and one
best-so-far curve CSV per seed, and a median/IQR summary CSV.  Outputs are
byte-deterministic for a given configuration.
"""

from __future__ import annotations

import argparse
import math
import sys
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .core import IterationRecord, LagoConfig, RunResult, run
from .kernels import KernelFamily
from .pde import make_pde_problem
from .problems import Problem, latin_hypercube, gradient_check, make_problem, suite_names

MODES = ("lago", "gradbo", "bo")

_FILTER_ACTIVATION_MIN_REMOVABLE = 1  # points within the reference separation


def resolve_problem(name: str, dim: int = 2, mesh_n: int = 50) -> Problem:
    if name == "pde-source-2d":
        return make_pde_problem(mesh_n=mesh_n)
    return make_problem(name, dim)


def build_config(mode: str, budget: int, seed: int, *, gamma: float = 1.0,
                 nu: float = 0.1, gradient_cost=None, n_init=None,
                 refit_period: int = 10) -> LagoConfig:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = LagoConfig(
        budget=budget, seed=seed, gamma=gamma, nu=nu,
        gradient_cost=gradient_cost, n_init=n_init, refit_period=refit_period,
    )
    if mode == "gradbo":
        cfg.use_trust_region = False
        cfg.kernel_family = KernelFamily.MATERN52
    elif mode == "bo":
        cfg.use_trust_region = False
        cfg.use_gradients = False
        cfg.kernel_family = KernelFamily.MATERN52
    return cfg


# ---------------------------------------------------------------------------
# Artifact formats
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def config_snapshot(problem: Problem, mode: str, cfg: LagoConfig, seeds,
                    mesh_n: int) -> dict:
    snap = {
        "problem": problem.name,
        "dim": problem.dim,
        "mode": mode,
        "seeds": ",".join(str(s) for s in seeds),
        "budget": cfg.budget,
        "gamma": cfg.gamma,
        "nu": cfg.nu,
        "n_low_ei": cfg.n_low_ei,
        "eps_terminate": cfg.eps_terminate,
        "eps_step": cfg.eps_step,
        "eta": cfg.eta,
        "sr1_guard": cfg.sr1_guard,
        "delta0": cfg.delta0,
        "delta_max": cfg.delta_max,
        "refit_period": cfg.refit_period,
        "n_init": cfg.n_init,
        "gradient_cost": cfg.gradient_cost,
        "use_trust_region": cfg.use_trust_region,
        "use_gradients": cfg.use_gradients,
        "kernel": cfg.kernel_family.value,
        "nugget": cfg.nugget,
        "acq_n_starts": cfg.acq_n_starts,
        "acq_n_prescreen": cfg.acq_n_prescreen,
        "mesh_n": mesh_n,
    }
    return {k: _fmt(v) for k, v in snap.items()}


def write_config(path: Path, snapshot: dict):
    lines = [f"{k}={snapshot[k]}" for k in sorted(snapshot)]
    path.write_text("\n".join(lines) + "\n")


def parse_config(text: str) -> dict:
    out = {}
    for line in text.strip().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out


def trace_header(dim: int) -> str:
    xs = ",".join(f"x{i}" for i in range(dim))
    return f"iteration,choice,{xs},f,ei,I_t,delta,lengthscale,cond,cost"


def trace_row(rec: IterationRecord) -> str:
    xs = ",".join(repr(float(v)) for v in rec.point)
    fields = [
        str(rec.iteration), rec.choice, xs, repr(float(rec.f)),
        repr(float(rec.ei)), repr(float(rec.local_improvement)),
        repr(float(rec.delta)), repr(float(rec.lengthscale)),
        repr(float(rec.cond)), str(rec.cost),
    ]
    return ",".join(fields)


def write_trace(path: Path, dim: int, trace):
    lines = [trace_header(dim)] + [trace_row(r) for r in trace]
    path.write_text("\n".join(lines) + "\n")


def best_so_far_curve(result: RunResult, budget: int) -> np.ndarray:
    """Best objective value after each whole evaluation unit, shape (budget, 2).

    Starts at the unit where the first evaluation completes; flat once the
    run stops (early or out of budget).
    """
    cost = result.cost_per_eval
    rows = []
    best = math.inf
    k = 0  # evaluations completed
    for u in range(1, budget + 1):
        while (k + 1) * cost <= u and k < len(result.archive):
            best = min(best, result.archive[k].f)
            k += 1
        if math.isfinite(best):
            rows.append((u, best))
    return np.array(rows)


def write_curve(path: Path, curve: np.ndarray):
    lines = ["units,best_f"] + [f"{int(u)},{repr(float(f))}" for u, f in curve]
    path.write_text("\n".join(lines) + "\n")


def write_summary(path: Path, units: np.ndarray, quartiles: np.ndarray):
    lines = ["units,q1,median,q3"]
    for u, (q1, q2, q3) in zip(units, quartiles):
        lines.append(f"{int(u)},{repr(float(q1))},{repr(float(q2))},{repr(float(q3))}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


def _run_one(task) -> RunResult:
    (name, dim, mesh_n, cfg_fields, seed) = task
    problem = resolve_problem(name, dim, mesh_n)
    cfg = LagoConfig(**cfg_fields)
    cfg.seed = seed
    return run(problem, cfg)


def _cfg_fields(cfg: LagoConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def run_campaign(problem_name: str, dim: int, mode: str, seeds, budget: int,
                 out_dir: Path, *, gamma: float = 1.0, nu: float = 0.1,
                 gradient_cost=None, mesh_n: int = 50, workers: int = 1,
                 refit_period: int = 10) -> dict:
    """Run one seeded campaign and persist config/traces/curves/summary.

    Returns {seed: RunResult}.
    """
    problem = resolve_problem(problem_name, dim, mesh_n)
    cfg = build_config(mode, budget, 0, gamma=gamma, nu=nu,
                       gradient_cost=gradient_cost, refit_period=refit_period)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "config.txt",
                 config_snapshot(problem, mode, cfg, seeds, mesh_n))

    tasks = [(problem.name, problem.dim, mesh_n, _cfg_fields(cfg), s) for s in seeds]
    if workers > 1:
        with get_context("fork").Pool(workers) as pool:
            results = pool.map(_run_one, tasks)
    else:
        results = [_run_one(t) for t in tasks]

    by_seed = dict(zip(seeds, results))
    curves = {}
    for seed, result in by_seed.items():
        write_trace(out_dir / f"trace_seed{seed}.csv", problem.dim, result.trace)
        curve = best_so_far_curve(result, budget)
        curves[seed] = curve
        write_curve(out_dir / f"curve_seed{seed}.csv", curve)

    units, quartiles = _aggregate(curves, problem.known_min, budget)
    write_summary(out_dir / "summary.csv", units, quartiles)
    return by_seed


def _aggregate(curves: dict, known_min, budget: int):
    start = max(int(c[0, 0]) for c in curves.values())
    units = np.arange(start, budget + 1)
    rows = []
    for seed in curves:
        c = curves[seed]
        lookup = dict((int(u), f) for u, f in c)
        best = None
        vals = []
        for u in units:
            best = lookup.get(int(u), best)
            vals.append(best)
        rows.append(vals)
    data = np.array(rows, dtype=float)
    if known_min is not None:
        data = np.abs(data - known_min)
    quartiles = np.percentile(data, [25, 50, 75], axis=0).T
    return units, quartiles


def run_gamma_ablation(gammas, seeds, budget: int, out_dir: Path, *,
                       problem_name: str = "levy", dim: int = 2,
                       workers: int = 1) -> dict:
    """One campaign per gamma with shared seeds/designs; returns final
    median errors keyed by gamma and writes a cross-gamma summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = resolve_problem(problem_name, dim)
    finals = {}
    for gamma in gammas:
        sub = out_dir / f"gamma_{_fmt(float(gamma))}"
        results = run_campaign(problem_name, dim, "lago", seeds, budget, sub,
                               gamma=float(gamma), workers=workers)
        errs = [abs(r.f_best - problem.known_min) for r in results.values()]
        finals[float(gamma)] = float(np.median(errs))
    lines = ["gamma,final_median_error"]
    for gamma in gammas:
        lines.append(f"{_fmt(float(gamma))},{repr(finals[float(gamma)])}")
    (out_dir / "gamma_summary.csv").write_text("\n".join(lines) + "\n")
    return finals


def _first_activation(trace) -> int:
    """Iteration index of the first filter application that had at least one
    non-center point within the reference separation (0.1 lengthscale)."""
    for rec in trace:
        if rec.filter_applied and rec.filter_near_ref >= _FILTER_ACTIVATION_MIN_REMOVABLE:
            return rec.iteration
    return -1


def run_conditioning_ablation(seeds, out_dir: Path, *, budget: int = 240,
                              window: int = 3, problem_name: str = "branin",
                              dim: int = 2, workers: int = 1) -> dict:
    """Event-aligned normalized condition numbers for nu = 0.1 versus nu = 0.

    Runs share seeds and initial designs across both arms.  Per seed, the
    alignment event t* is the first filter application with a removable
    point at the reference separation, an event that occurs at the same
    iteration in both arms because their trajectories coincide until the
    filter first makes a difference.  Condition numbers are normalized by
    the conditioning in force when the filter activated (the end of
    iteration t* - 1, the last state shared by both arms), so the two arms
    are measured against a common reference.  Runs without an activation,
    or where the +-window does not fit inside the trace, are excluded and
    counted.  Returns {nu: {offset: list of ratios}} and writes
    aligned/summary CSVs.
    """
    if dim != 2:
        raise ValueError("the conditioning ablation is defined for 2D problems")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = {}
    excluded = {}
    for nu in (0.1, 0.0):
        sub = out_dir / f"nu_{_fmt(nu)}"
        results = run_campaign(problem_name, dim, "lago", seeds, budget, sub,
                               nu=nu, workers=workers)
        ratios = {off: [] for off in range(-window, window + 1)}
        n_excluded = 0
        for seed in seeds:
            trace = results[seed].trace
            t_star = _first_activation(trace)
            if t_star < 0:
                n_excluded += 1
                continue
            cond = {rec.iteration: rec.cond for rec in trace}
            if t_star - max(window, 1) < 1 or t_star + window > len(trace):
                n_excluded += 1
                continue
            base = cond[t_star - 1]
            for off in range(-window, window + 1):
                ratios[off].append(cond[t_star + off] / base)
        table[nu] = ratios
        excluded[nu] = n_excluded

    aligned = ["nu,seed_rank,offset,kappa_ratio"]
    summary = ["nu,offset,median,q1,q3,n_seeds,n_excluded"]
    for nu in (0.1, 0.0):
        for off in range(-window, window + 1):
            vals = table[nu][off]
            for rank, v in enumerate(vals):
                aligned.append(f"{_fmt(nu)},{rank},{off},{repr(float(v))}")
            if vals:
                q1, q2, q3 = np.percentile(vals, [25, 50, 75])
            else:
                q1 = q2 = q3 = math.nan
            summary.append(
                f"{_fmt(nu)},{off},{repr(float(q2))},{repr(float(q1))},"
                f"{repr(float(q3))},{len(vals)},{excluded[nu]}"
            )
    (out_dir / "conditioning_aligned.csv").write_text("\n".join(aligned) + "\n")
    (out_dir / "conditioning_summary.csv").write_text("\n".join(summary) + "\n")
    return table


def shared_design(problem: Problem, seed: int, n: int = None) -> np.ndarray:
    """The initial design a run with this seed uses, for cross-mode checks."""
    if n is None:
        n = 5 * problem.dim
    return latin_hypercube(problem.domain, n,
                           seed=np.random.SeedSequence((int(seed), 0)))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def parse_seeds(text: str):
    seeds = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if "-" in chunk[1:]:
            a, b = chunk.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif chunk:
            seeds.append(int(chunk))
    if not seeds:
        raise ValueError(f"no seeds in {text!r}")
    return seeds


def _add_common(p):
    p.add_argument("--seeds", default="0-9", help="e.g. 0-9 or 1,4,7")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lago",
                                     description="hybrid global/local optimization harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="seeded campaign on one problem")
    p_run.add_argument("--problem", required=True)
    p_run.add_argument("--dim", type=int, default=2)
    p_run.add_argument("--mode", default="lago", choices=MODES)
    p_run.add_argument("--budget", type=int, default=None,
                       help="evaluation units (default 210*dim)")
    p_run.add_argument("--gamma", type=float, default=1.0)
    p_run.add_argument("--nu", type=float, default=0.1)
    p_run.add_argument("--gradient-cost", type=int, default=None)
    p_run.add_argument("--mesh-n", type=int, default=50)
    _add_common(p_run)

    p_gam = sub.add_parser("ablate-gamma", help="gamma sweep on Levy")
    p_gam.add_argument("--problem", default="levy")
    p_gam.add_argument("--dim", type=int, default=2)
    p_gam.add_argument("--gamma", default="0.5,1,2,5",
                       help="comma-separated gamma values")
    p_gam.add_argument("--budget", type=int, default=None)
    _add_common(p_gam)

    p_cond = sub.add_parser("ablate-conditioning",
                            help="event-aligned conditioning, nu=0.1 vs nu=0")
    p_cond.add_argument("--problem", default="branin")
    p_cond.add_argument("--dim", type=int, default=2)
    p_cond.add_argument("--budget", type=int, default=240)
    p_cond.add_argument("--window", type=int, default=3,
                        help="half-width in iterations around the event")
    _add_common(p_cond)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--problem", default=None)
    p_grad.add_argument("--dim", type=int, default=2)
    p_grad.add_argument("--mesh-n", type=int, default=32)
    p_grad.add_argument("--points", type=int, default=100)
    p_grad.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-problems", help="show the available problems")

    args = parser.parse_args(argv)

    if args.command == "list-problems":
        for name in suite_names():
            prob = make_problem(name, 2)
            print(f"{name:18s} d=2  domain=[{prob.domain.lower}, {prob.domain.upper}]"
                  f"  min={prob.known_min}")
        print("styblinski-tang    d=5  (also available)")
        print("pde-source-2d      d=2  domain=[[0. 0.], [1. 1.]]  min=? "
              "(source placement, --mesh-n)")
        return 0

    if args.command == "gradcheck":
        names = [args.problem] if args.problem else list(suite_names()) + ["pde-source-2d"]
        worst = 0.0
        for name in names:
            mesh_n = getattr(args, "mesh_n", 32)
            problem = resolve_problem(name, args.dim if name != "pde-source-2d" else 2,
                                      mesh_n)
            err = gradient_check(problem, n_points=args.points, seed=args.seed)
            worst = max(worst, err)
            print(f"{problem.name:18s} max rel gradient error = {err:.3e}")
        return 0 if worst < 1e-4 else 1

    seeds = parse_seeds(args.seeds)
    if args.command == "run":
        budget = args.budget if args.budget is not None else 210 * args.dim
        run_campaign(args.problem, args.dim, args.mode, seeds, budget,
                     Path(args.out), gamma=args.gamma, nu=args.nu,
                     gradient_cost=args.gradient_cost, mesh_n=args.mesh_n,
                     workers=args.workers)
        print(f"campaign written to {args.out}")
        return 0

    if args.command == "ablate-gamma":
        budget = args.budget if args.budget is not None else 210 * args.dim
        gammas = [float(g) for g in args.gamma.split(",")]
        finals = run_gamma_ablation(gammas, seeds, budget, Path(args.out),
                                    problem_name=args.problem, dim=args.dim,
                                    workers=args.workers)
        for gamma in gammas:
            print(f"gamma={gamma:g}  final median error={finals[float(gamma)]:.3e}")
        return 0

    if args.command == "ablate-conditioning":
        run_conditioning_ablation(seeds, Path(args.out), budget=args.budget,
                                  window=args.window, problem_name=args.problem,
                                  dim=args.dim, workers=args.workers)
        print(f"conditioning ablation written to {args.out}")
        return 0

    parser.error(f"unhandled command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
