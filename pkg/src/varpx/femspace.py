"""Mixed finite element pairs on triangles.

Supported pairs (velocity / pressure):

- ``mini``: (P1 + cell bubble)^2 / P1
- ``taylor_hood``: (P2)^2 / P1
- ``p1p1``: (P1)^2 / P1 -- deliberately inf-sup unstable, kept for the
  negative control in inf-sup scans.

Velocity spaces carry homogeneous Dirichlet data on the whole boundary;
the boundary degrees of freedom are recorded and constrained by the
solver.  Pressure is continuous P1 with the zero-mean condition handled
at the solver level.  All per-cell quadrature data (physical points,
basis values, physical gradients) is precomputed at build time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from varpx.mesh import Triangulation
from varpx.quadrature import edge_rule, triangle_rule

__all__ = [
    "FeSpacePair",
    "FeFunction",
    "build_pair",
    "interpolate_clement",
    "evaluate",
    "PAIR_KINDS",
]

PAIR_KINDS = ("mini", "taylor_hood", "p1p1")

_GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _lambdas(pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (nq, 3) of reference points (nq, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([1.0 - x - y, x, y])


def _p1_basis(pts):
    lam = _lambdas(pts)
    vals = lam.T.copy()  # (3, nq)
    grads = np.broadcast_to(_GRAD_LAMBDA[:, None, :], (3, len(pts), 2)).copy()
    return vals, grads


def _bubble_basis(pts):
    lam = _lambdas(pts)
    vals = 27.0 * lam[:, 0] * lam[:, 1] * lam[:, 2]
    grads = 27.0 * (
        np.outer(lam[:, 1] * lam[:, 2], _GRAD_LAMBDA[0])
        + np.outer(lam[:, 0] * lam[:, 2], _GRAD_LAMBDA[1])
        + np.outer(lam[:, 0] * lam[:, 1], _GRAD_LAMBDA[2])
    )
    return vals[None, :], grads[None, :, :]


def _p2_basis(pts):
    lam = _lambdas(pts)
    nq = len(pts)
    vals = np.empty((6, nq))
    grads = np.empty((6, nq, 2))
    for i in range(3):
        vals[i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[i] = np.outer(4.0 * lam[:, i] - 1.0, _GRAD_LAMBDA[i])
    edges = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(edges):
        vals[3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[3 + k] = 4.0 * (
            np.outer(lam[:, j], _GRAD_LAMBDA[i]) + np.outer(lam[:, i], _GRAD_LAMBDA[j])
        )
    return vals, grads


def _mini_basis(pts):
    v1, g1 = _p1_basis(pts)
    vb, gb = _bubble_basis(pts)
    return np.vstack([v1, vb]), np.concatenate([g1, gb], axis=0)


_SCALAR_BASES: dict[str, Callable] = {
    "mini": _mini_basis,
    "taylor_hood": _p2_basis,
    "p1p1": _p1_basis,
}


@dataclass(frozen=True)
class FeSpacePair:
    """A velocity/pressure pair with precomputed quadrature tables."""

    mesh: Triangulation
    pair_kind: str
    quad_degree: int
    # reference data
    quad_points: np.ndarray = field(repr=False, default=None)
    quad_weights: np.ndarray = field(repr=False, default=None)
    vel_basis_vals: np.ndarray = field(repr=False, default=None)  # (nb, nq)
    pres_basis_vals: np.ndarray = field(repr=False, default=None)  # (3, nq)
    # dof maps
    vel_cell_dofs: np.ndarray = field(repr=False, default=None)  # (nc, nb) scalar ids
    n_vel_scalar: int = 0
    vel_boundary_scalar: np.ndarray = field(repr=False, default=None)
    # geometry
    detj: np.ndarray = field(repr=False, default=None)  # (nc,)
    invj: np.ndarray = field(repr=False, default=None)  # (nc, 2, 2)
    phys_points: np.ndarray = field(repr=False, default=None)  # (nc, nq, 2)
    vel_grads: np.ndarray = field(repr=False, default=None)  # (nc, nb, nq, 2)
    pres_grads: np.ndarray = field(repr=False, default=None)  # (nc, 3, 2)

    @property
    def n_vel_dofs(self) -> int:
        """Vector-valued velocity dof count before boundary conditions."""
        return 2 * self.n_vel_scalar

    @property
    def n_pres_dofs(self) -> int:
        return self.mesh.num_vertices

    @property
    def n_local_vel(self) -> int:
        return self.vel_basis_vals.shape[0]

    def velocity_function(self, coeffs=None) -> "FeFunction":
        if coeffs is None:
            coeffs = np.zeros(self.n_vel_dofs)
        return FeFunction(self, np.asarray(coeffs, dtype=float), "velocity")

    def pressure_function(self, coeffs=None) -> "FeFunction":
        if coeffs is None:
            coeffs = np.zeros(self.n_pres_dofs)
        return FeFunction(self, np.asarray(coeffs, dtype=float), "pressure")


@dataclass
class FeFunction:
    """Coefficient vector attached to one side of a space pair."""

    space: FeSpacePair
    coeffs: np.ndarray
    side: str  # "velocity" or "pressure"

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        expected = (
            self.space.n_vel_dofs if self.side == "velocity" else self.space.n_pres_dofs
        )
        if self.coeffs.shape != (expected,):
            raise ValueError(
                f"coefficient length {self.coeffs.shape} does not match dof count {expected}"
            )


def build_pair(mesh: Triangulation, pair_kind: str, quad_degree: int = 8) -> FeSpacePair:
    """Construct dof maps and quadrature tables for a mixed pair."""
    if pair_kind not in PAIR_KINDS:
        raise ValueError(f"unknown pair kind {pair_kind!r}; expected one of {PAIR_KINDS}")
    qp, qw = triangle_rule(quad_degree)
    vel_vals, vel_ref_grads = _SCALAR_BASES[pair_kind](qp)
    pres_vals, _ = _p1_basis(qp)

    nv, nc, ne = mesh.num_vertices, mesh.num_cells, len(mesh.edges)
    cells = mesh.cells
    if pair_kind == "mini":
        dofs = np.column_stack([cells, nv + np.arange(nc)])
        n_scalar = nv + nc
        bscalar = mesh.boundary_vertices
    elif pair_kind == "taylor_hood":
        dofs = np.column_stack([cells, nv + mesh.cell_edges])
        n_scalar = nv + ne
        bpairs = np.sort(mesh.boundary_edges[:, :2], axis=1)
        edge_lookup = {tuple(e): i for i, e in enumerate(map(tuple, mesh.edges))}
        bedge_ids = np.array([edge_lookup[tuple(e)] for e in bpairs], dtype=np.int64)
        bscalar = np.unique(np.concatenate([mesh.boundary_vertices, nv + bedge_ids]))
    else:  # p1p1
        dofs = cells.copy()
        n_scalar = nv
        bscalar = mesh.boundary_vertices

    v = mesh.vertices[cells]
    orig = v[:, 0]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)  # (nc, 2, 2)
    detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    invj = np.empty_like(jac)
    invj[:, 0, 0] = jac[:, 1, 1] / detj
    invj[:, 0, 1] = -jac[:, 0, 1] / detj
    invj[:, 1, 0] = -jac[:, 1, 0] / detj
    invj[:, 1, 1] = jac[:, 0, 0] / detj
    phys = orig[:, None, :] + np.einsum("cij,qj->cqi", jac, qp)
    # physical gradient: grad_x = invJ^T grad_ref
    vel_grads = np.einsum("cji,bqj->cbqi", invj, vel_ref_grads)
    pres_grads = np.einsum("cji,bj->cbi", invj, _GRAD_LAMBDA)

    return FeSpacePair(
        mesh=mesh,
        pair_kind=pair_kind,
        quad_degree=quad_degree,
        quad_points=qp,
        quad_weights=qw,
        vel_basis_vals=vel_vals,
        pres_basis_vals=pres_vals,
        vel_cell_dofs=dofs,
        n_vel_scalar=n_scalar,
        vel_boundary_scalar=np.asarray(bscalar, dtype=np.int64),
        detj=detj,
        invj=invj,
        phys_points=phys,
        vel_grads=vel_grads,
        pres_grads=pres_grads,
    )


# -- batched evaluation at quadrature points ----------------------------------

def gathered_velocity_coeffs(space: FeSpacePair, coeffs: np.ndarray) -> np.ndarray:
    """Per-cell velocity coefficients, shape (nc, nb, 2)."""
    ns = space.n_vel_scalar
    comp = coeffs.reshape(2, ns)
    return np.stack([comp[0][space.vel_cell_dofs], comp[1][space.vel_cell_dofs]], axis=-1)


def velocity_gradients(space: FeSpacePair, coeffs: np.ndarray) -> np.ndarray:
    """Velocity gradient tensor at quadrature points, (nc, nq, 2, 2).

    Index convention: out[c, q, k, j] = d v_k / d x_j.
    """
    cc = gathered_velocity_coeffs(space, coeffs)
    return np.einsum("cbk,cbqj->cqkj", cc, space.vel_grads)


def velocity_sym_gradients(space: FeSpacePair, coeffs: np.ndarray) -> np.ndarray:
    g = velocity_gradients(space, coeffs)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def velocity_values(space: FeSpacePair, coeffs: np.ndarray) -> np.ndarray:
    cc = gathered_velocity_coeffs(space, coeffs)
    return np.einsum("cbk,bq->cqk", cc, space.vel_basis_vals)


def pressure_values(space: FeSpacePair, coeffs: np.ndarray) -> np.ndarray:
    cp = coeffs[space.mesh.cells]  # (nc, 3)
    return np.einsum("cb,bq->cq", cp, space.pres_basis_vals)


# -- point evaluation ----------------------------------------------------------

def evaluate(fe_function: FeFunction, cell: int, bary):
    """Evaluate an FE function at a barycentric point of one cell.

    Returns ``(value, gradient, sym_gradient)``; the symmetric gradient is
    None for pressure functions.
    """
    bary = np.asarray(bary, dtype=float)
    if bary.shape != (3,) or abs(bary.sum() - 1.0) > 1e-12 or bary.min() < -1e-12:
        raise ValueError("expected a barycentric point inside the cell")
    space = fe_function.space
    ref = np.array([[bary[1], bary[2]]])
    invj = space.invj[cell]
    if fe_function.side == "pressure":
        vals, ref_grads = _p1_basis(ref)
        cp = fe_function.coeffs[space.mesh.cells[cell]]
        value = float(cp @ vals[:, 0])
        grad = invj.T @ (cp @ ref_grads[:, 0, :])
        return value, grad, None
    vals, ref_grads = _SCALAR_BASES[space.pair_kind](ref)
    cc = fe_function.coeffs.reshape(2, space.n_vel_scalar)[:, space.vel_cell_dofs[cell]]
    value = cc @ vals[:, 0]
    grad = np.einsum("kb,bj,ji->ki", cc, ref_grads[:, 0, :], invj)
    sym = 0.5 * (grad + grad.T)
    return value, grad, sym


# -- Clement interpolation -----------------------------------------------------

def _cell_field_integrals(mesh: Triangulation, f, degree: int = 8) -> np.ndarray:
    """Per-cell integrals of a callable scalar field, (nc,)."""
    pts, wts = triangle_rule(degree)
    v = mesh.vertices[mesh.cells]
    orig = v[:, 0]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    phys = orig[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)
    vals = np.asarray(f(phys.reshape(-1, 2)), dtype=float).reshape(mesh.num_cells, -1)
    return 2.0 * mesh.areas * (vals @ wts)


def clement_vertex_values(mesh: Triangulation, f, degree: int = 8) -> np.ndarray:
    """Patch-average nodal values: value at z = mean of f over cells touching z."""
    integrals = _cell_field_integrals(mesh, f, degree)
    out = np.empty(mesh.num_vertices)
    for z, patch in enumerate(mesh.vertex_patches):
        out[z] = integrals[patch].sum() / mesh.areas[patch].sum()
    return out


def interpolate_clement(space: FeSpacePair, f, degree: int = 8) -> FeFunction:
    """Clement interpolant of a scalar field onto the P1 pressure space."""
    return space.pressure_function(clement_vertex_values(space.mesh, f, degree))


def scott_zhang_boundary_values(mesh: Triangulation, f, degree: int = 8) -> np.ndarray:
    """Dual-basis edge averages at boundary vertices, (n_boundary_vertices,).

    For each boundary vertex the value is ``int_e psi_z f`` over its first
    boundary edge, where psi_z is the L2-dual of the P1 basis on that edge.
    This reproduces functions linear along the edge and vanishes for
    zero-trace fields.
    """
    xs, ws = edge_rule(degree)
    bvert = np.unique(mesh.boundary_edges[:, :2])
    chosen = {}
    for a, b, _ in mesh.boundary_edges:
        chosen.setdefault(int(a), (int(a), int(b)))
        chosen.setdefault(int(b), (int(a), int(b)))
    out = np.empty(len(bvert))
    for i, z in enumerate(bvert):
        a, b = chosen[int(z)]
        if a != z:
            a, b = b, a
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        pts = pa[None, :] + np.outer(xs, pb - pa)
        vals = np.asarray(f(pts), dtype=float)
        # dual basis of the P1 function (1 - s) on the unit interval
        psi = 4.0 - 6.0 * xs
        out[i] = float(np.sum(ws * psi * vals))
    return out
