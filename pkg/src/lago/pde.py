"""Source-placement problem constrained by a variable-coefficient Poisson
equation on the unit square.

A P1 finite-element discretization on a structured triangular mesh (n x n
squares, each split along the lower-left to upper-right diagonal) yields

    A y = b(c),   A_ij = sum_T kappa(centroid_T) int_T grad phi_i . grad phi_j

with homogeneous Dirichlet conditions eliminated.  The source is
interpolated into the P1 space and integrated with the exact mass matrix,
b(c) = M u_h(c), the way a standard finite-element stack assembles a
coefficient-function load.  The reduced cost J(c) = 1/2 ||y - y_d||^2 uses
the same mass-matrix quadrature, and its gradient comes from the discrete
adjoint:

    A p = M (y - y_d),     dJ/dc_i = (M du_h/dc_i)^T p,

which is exact for the discrete cost because J depends on c only through
the nodal source values.  The stiffness matrix is factorized once and
shared across evaluations; each joint (J, grad J) evaluation costs two
triangular solves plus one load assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .problems import Box, Problem

_PI = math.pi


@dataclass(frozen=True)
class Mesh:
    """Structured triangulation of the unit square."""

    vertices: np.ndarray      # (nv, 2)
    triangles: np.ndarray     # (nt, 3) vertex indices, counterclockwise
    boundary: np.ndarray      # (nv,) bool


def build_mesh(n: int) -> Mesh:
    """n x n squares, each split along the lower-left/upper-right diagonal."""
    if n < 2:
        raise ValueError("mesh resolution must be at least 2")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    triangles = np.array(tris, dtype=np.int64)
    boundary = (
        np.isclose(vertices[:, 0], 0.0) | np.isclose(vertices[:, 0], 1.0)
        | np.isclose(vertices[:, 1], 0.0) | np.isclose(vertices[:, 1], 1.0)
    )
    return Mesh(vertices=vertices, triangles=triangles, boundary=boundary)


def _default_kappa(pts: np.ndarray) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    inner = (
        np.cos(_PI * x) * np.sin(_PI * y)
        + np.cos(2.0 * _PI * x) * np.sin(_PI * y)
        + np.cos(2.0 * _PI * x) * np.sin(2.0 * _PI * y)
    )
    return np.exp(math.exp(-1.125) * inner)


def _default_desired_state(pts: np.ndarray) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    return np.exp(2.0 * x + 2.0 * y) * np.sin(4.0 * _PI * x) * np.sin(4.0 * _PI * y)


@dataclass(frozen=True)
class PdeSourceSpec:
    """Problem data: source amplitude/width, diffusion field, target state."""

    mesh_n: int = 50
    alpha: float = 5.0e2
    beta: float = 5.0e3
    kappa: Callable[[np.ndarray], np.ndarray] = _default_kappa
    desired_state: Callable[[np.ndarray], np.ndarray] = _default_desired_state

    def source(self, pts: np.ndarray, c) -> np.ndarray:
        c = np.asarray(c, dtype=float).ravel()
        d2 = np.sum((pts - c) ** 2, axis=-1)
        return self.alpha * np.exp(-self.beta * d2)

    def source_dc(self, pts: np.ndarray, c) -> np.ndarray:
        """Derivative of the source w.r.t. the placement c, shape (..., 2)."""
        c = np.asarray(c, dtype=float).ravel()
        diff = pts - c
        d2 = np.sum(diff ** 2, axis=-1)
        w = 2.0 * self.alpha * self.beta * np.exp(-self.beta * d2)
        return w[..., None] * diff


@dataclass
class FemSystem:
    """Assembled, prefactorized discrete operators for one (spec, mesh)."""

    mesh: Mesh
    interior: np.ndarray                 # indices of interior vertices
    stiffness: sp.csc_matrix             # interior x interior, kappa-weighted
    mass: sp.csr_matrix                  # full vertex set, exact P1
    yd_nodes: np.ndarray                 # nodal interpolant of the target
    areas: np.ndarray = field(repr=False)      # (nt,)
    _lu: object = field(default=None, repr=False)

    def solve_interior(self, rhs_interior: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs_interior)

    def load_vector(self, values_at_vertices: np.ndarray) -> np.ndarray:
        """Assemble int g_h phi_i with g_h the P1 interpolant of g."""
        return self.mass @ values_at_vertices


def assemble(spec: PdeSourceSpec) -> FemSystem:
    """Build the stiffness/mass matrices and factorize the interior system."""
    mesh = build_mesh(spec.mesh_n)
    verts = mesh.vertices
    tri = mesh.triangles
    p = verts[tri]                                   # (nt, 3, 2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det <= 0):
        raise ValueError("mesh contains degenerate or inverted triangles")
    areas = 0.5 * det

    # Barycentric gradients: grad phi_i = (b_i, c_i) / (2 A), cyclic formula.
    x = p[..., 0]
    y = p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    centroids = p.mean(axis=1)
    kap = np.asarray(spec.kappa(centroids), dtype=float)
    scale = kap / (4.0 * areas)
    local_k = scale[:, None, None] * (
        b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]
    )

    nv = verts.shape[0]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    K_full = sp.coo_matrix((local_k.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    mass_pattern = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local_m = areas[:, None, None] * mass_pattern
    M = sp.coo_matrix((local_m.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    interior = np.nonzero(~mesh.boundary)[0]
    A = K_full[interior][:, interior].tocsc()
    system = FemSystem(
        mesh=mesh, interior=interior, stiffness=A, mass=M,
        yd_nodes=np.asarray(spec.desired_state(verts), dtype=float),
        areas=areas,
    )
    system._lu = splu(A)
    return system


def solve_state(system: FemSystem, spec: PdeSourceSpec, c) -> np.ndarray:
    """State y (all vertices, zero on the boundary) for source placement c."""
    rhs = system.load_vector(spec.source(system.mesh.vertices, c))
    y = np.zeros(system.mesh.vertices.shape[0])
    y[system.interior] = system.solve_interior(rhs[system.interior])
    return y


def solve_adjoint(system: FemSystem, spec: PdeSourceSpec, y: np.ndarray) -> np.ndarray:
    """Adjoint p (all vertices, zero on the boundary) for a given state."""
    resid = system.mass @ (y - system.yd_nodes)
    p = np.zeros_like(y)
    p[system.interior] = system.solve_interior(resid[system.interior])
    return p


def reduced_cost_and_gradient(system: FemSystem, spec: PdeSourceSpec, c):
    """Discrete reduced cost and its exact gradient via the adjoint.

    One stiffness solve for the state, one for the adjoint; the gradient
    contracts the adjoint with the c-derivative of the load, using the same
    quadrature as the load itself.
    """
    y = solve_state(system, spec, c)
    err = y - system.yd_nodes
    J = 0.5 * float(err @ (system.mass @ err))
    p = solve_adjoint(system, spec, y)
    du = spec.source_dc(system.mesh.vertices, c)      # (nv, 2)
    grad = np.empty(2)
    for i in range(2):
        grad[i] = float(system.load_vector(du[:, i]) @ p)
    return J, grad


def make_pde_problem(mesh_n: int = 50) -> Problem:
    """Package the source-placement problem for the optimization harness.

    The gradient is charged one function unit (one extra linear solve), and
    the assembled system is shared by every evaluation.
    """
    spec = PdeSourceSpec(mesh_n=mesh_n)
    system = assemble(spec)

    def evaluate(x):
        return reduced_cost_and_gradient(system, spec, x)

    return Problem(
        name="pde-source-2d",
        dim=2,
        domain=Box(np.zeros(2), np.ones(2)),
        evaluate=evaluate,
        gradient_cost=1,
        known_min=None,
        known_minimizers=(np.array([0.89, 0.89]),),
    )
