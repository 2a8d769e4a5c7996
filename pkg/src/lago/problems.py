"""Benchmark objectives with analytic gradients, box domains, Latin
hypercube designs, and evaluation-cost accounting.

Each problem evaluates jointly to (f, grad f).  The ledger charges one
function unit plus ``gradient_cost`` units per joint evaluation; for the
synthetic suite the gradient is priced at d function evaluations by default,
and campaigns may override it (e.g. unit gradient cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Box:
    """Axis-aligned box domain."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper bound shapes differ")
        if not np.all(self.upper > self.lower):
            raise ValueError("degenerate box: upper must exceed lower")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def corners(self) -> np.ndarray:
        d = self.dim
        out = np.empty((2 ** d, d))
        for i in range(2 ** d):
            for j in range(d):
                out[i, j] = self.upper[j] if (i >> j) & 1 else self.lower[j]
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((n, self.dim))


@dataclass
class EvaluationLedger:
    """Running account of evaluation cost in function-evaluation units."""

    function_units: int = 0
    entries: list = field(default_factory=list)

    def charge(self, point, cost: int):
        self.entries.append((np.asarray(point, dtype=float).copy(), int(cost)))
        self.function_units += int(cost)


@dataclass(frozen=True)
class Problem:
    """Objective with analytic gradient on a box domain.

    ``evaluate(x)`` returns (f, grad).  ``gradient_cost`` is the number of
    function-evaluation units one gradient is worth (None means the
    dimension d).
    """

    name: str
    dim: int
    domain: Box
    evaluate: Callable[[np.ndarray], tuple]
    gradient_cost: Optional[int] = None
    known_min: Optional[float] = None
    known_minimizers: Optional[tuple] = None

    def resolve_gradient_cost(self, override: Optional[int] = None) -> int:
        if override is not None:
            return int(override)
        if self.gradient_cost is not None:
            return int(self.gradient_cost)
        return self.dim


# ---------------------------------------------------------------------------
# Benchmark suite
# ---------------------------------------------------------------------------


def _sphere(x):
    x = np.asarray(x, dtype=float)
    return float(x @ x), 2.0 * x


def _branin(x):
    x1, x2 = float(x[0]), float(x[1])
    a = 5.1 / (4.0 * math.pi ** 2)
    b = 5.0 / math.pi
    c = 10.0 * (1.0 - 1.0 / (8.0 * math.pi))
    t = x2 - a * x1 ** 2 + b * x1 - 6.0
    f = t ** 2 + c * math.cos(x1) + 10.0
    g1 = 2.0 * t * (-2.0 * a * x1 + b) - c * math.sin(x1)
    g2 = 2.0 * t
    return f, np.array([g1, g2])


def _rosenbrock(x):
    x1, x2 = float(x[0]), float(x[1])
    f = (1.0 - x1) ** 2 + 100.0 * (x2 - x1 ** 2) ** 2
    g1 = -2.0 * (1.0 - x1) - 400.0 * x1 * (x2 - x1 ** 2)
    g2 = 200.0 * (x2 - x1 ** 2)
    return f, np.array([g1, g2])


def _levy2(x):
    x1, x2 = float(x[0]), float(x[1])
    w1 = 1.0 + (x1 - 1.0) / 4.0
    w2 = 1.0 + (x2 - 1.0) / 4.0
    s1 = math.sin(math.pi * w1)
    s1p = math.sin(math.pi * w1 + 1.0)
    s2 = math.sin(_TWO_PI * w2)
    f = (
        s1 ** 2
        + (w1 - 1.0) ** 2 * (1.0 + 10.0 * s1p ** 2)
        + (w2 - 1.0) ** 2 * (1.0 + s2 ** 2)
    )
    df_dw1 = (
        2.0 * math.pi * s1 * math.cos(math.pi * w1)
        + 2.0 * (w1 - 1.0) * (1.0 + 10.0 * s1p ** 2)
        + (w1 - 1.0) ** 2 * 20.0 * math.pi * s1p * math.cos(math.pi * w1 + 1.0)
    )
    df_dw2 = (
        2.0 * (w2 - 1.0) * (1.0 + s2 ** 2)
        + (w2 - 1.0) ** 2 * 2.0 * _TWO_PI * s2 * math.cos(_TWO_PI * w2)
    )
    return f, np.array([df_dw1, df_dw2]) / 4.0


def _styblinski_tang(x):
    x = np.asarray(x, dtype=float)
    f = 0.5 * float(np.sum(x ** 4 - 16.0 * x ** 2 + 5.0 * x))
    g = 0.5 * (4.0 * x ** 3 - 32.0 * x + 5.0)
    return f, g


_ST_MINIMIZER = -2.903534027771177  # root of 2x^3 - 16x + 2.5 near -2.9

_SUITE = {
    "sphere": dict(
        dims=(2,),
        domain=lambda d: Box(np.full(d, -5.12), np.full(d, 5.12)),
        evaluate=_sphere,
        known_min=0.0,
        minimizers=lambda d: (np.zeros(d),),
    ),
    "branin": dict(
        dims=(2,),
        domain=lambda d: Box(np.array([-5.0, 0.0]), np.array([10.0, 15.0])),
        evaluate=_branin,
        known_min=0.39789,
        minimizers=lambda d: (
            np.array([-math.pi, 12.275]),
            np.array([math.pi, 2.275]),
            np.array([9.42478, 2.475]),
        ),
    ),
    "rosenbrock": dict(
        dims=(2,),
        domain=lambda d: Box(np.full(d, -5.0), np.full(d, 10.0)),
        evaluate=_rosenbrock,
        known_min=0.0,
        minimizers=lambda d: (np.ones(d),),
    ),
    "levy": dict(
        dims=(2,),
        domain=lambda d: Box(np.full(d, -10.0), np.full(d, 10.0)),
        evaluate=_levy2,
        known_min=0.0,
        minimizers=lambda d: (np.ones(d),),
    ),
    "styblinski-tang": dict(
        dims=(2, 5),
        domain=lambda d: Box(np.full(d, -5.0), np.full(d, 5.0)),
        evaluate=_styblinski_tang,
        known_min=None,  # filled per-dimension below
        minimizers=lambda d: (np.full(d, _ST_MINIMIZER),),
    ),
}


def suite_names() -> tuple:
    return tuple(sorted(_SUITE))


def make_problem(name: str, dim: int = 2) -> Problem:
    """Build a benchmark problem by name.

    Raises ValueError for unknown names or unsupported dimensions.
    """
    key = name.lower()
    if key not in _SUITE:
        raise ValueError(f"unknown problem {name!r}; known: {', '.join(suite_names())}")
    entry = _SUITE[key]
    if dim not in entry["dims"]:
        raise ValueError(f"problem {name!r} supports dimensions {entry['dims']}, got {dim}")
    known_min = entry["known_min"]
    if key == "styblinski-tang":
        known_min = -39.16599 * dim
    return Problem(
        name=key,
        dim=dim,
        domain=entry["domain"](dim),
        evaluate=entry["evaluate"],
        known_min=known_min,
        known_minimizers=tuple(entry["minimizers"](dim)),
    )


def latin_hypercube(domain: Box, n: int, seed) -> np.ndarray:
    """Latin hypercube design: one point per axis stratum in every dimension."""
    if n < 1:
        raise ValueError("need at least one design point")
    rng = np.random.default_rng(seed)
    d = domain.dim
    unit = np.empty((n, d))
    for j in range(d):
        strata = (rng.permutation(n) + rng.random(n)) / n
        unit[:, j] = strata
    return domain.lower + (domain.upper - domain.lower) * unit


def gradient_check(problem: Problem, n_points: int = 100, seed: int = 0,
                   step: float = 1e-6) -> float:
    """Max relative error of the analytic gradient against central finite
    differences at random interior points."""
    rng = np.random.default_rng(seed)
    # Shrink toward the center so FD stencils stay inside the box.
    lo, hi = problem.domain.lower, problem.domain.upper
    pts = lo + (hi - lo) * (0.05 + 0.9 * rng.random((n_points, problem.dim)))
    worst = 0.0
    for x in pts:
        _, g = problem.evaluate(x)
        h = step * np.maximum(1.0, np.abs(x))
        fd = np.empty_like(g)
        for i in range(problem.dim):
            e = np.zeros(problem.dim)
            e[i] = h[i]
            fp, _ = problem.evaluate(x + e)
            fm, _ = problem.evaluate(x - e)
            fd[i] = (fp - fm) / (2.0 * h[i])
        scale = max(1.0, float(np.linalg.norm(g)))
        worst = max(worst, float(np.linalg.norm(fd - g)) / scale)
    return worst
