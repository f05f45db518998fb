"""Divergence-preserving projection for the MINI pair, rigid-motion
fitting, and spectral inf-sup estimation.

The projection is the classical Scott-Zhang-plus-bubble construction: the
nodal part uses patch averages at interior vertices and dual-basis edge
averages at boundary vertices (so zero traces survive exactly and global
linear polynomials are reproduced), and each cell's interior bubble is
scaled to restore the cell mean of the defect.  Matching cell means makes
the divergence functional agree against every continuous P1 test function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from varpx.femspace import (
    FeFunction,
    FeSpacePair,
    build_pair,
    clement_vertex_values,
    scott_zhang_boundary_values,
)
from varpx.mesh import Triangulation

__all__ = [
    "AssumptionReport",
    "pi_div",
    "rigid_motion_fit",
    "verify_assumptions",
    "infsup_estimate",
    "div_functional",
    "random_zero_trace_field",
]


@dataclass(frozen=True)
class AssumptionReport:
    """Measured constants for the projection assumptions."""

    max_div_residual: float
    stability_constant: float
    clement_stability_constant: float
    linear_reproduction_error: float
    boundary_coeff_max: float
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "max_div_residual": self.max_div_residual,
            "stability_constant": self.stability_constant,
            "clement_stability_constant": self.clement_stability_constant,
            "linear_reproduction_error": self.linear_reproduction_error,
            "boundary_coeff_max": self.boundary_coeff_max,
            "samples": self.samples,
            "seed": self.seed,
        }


def _scott_zhang_scalar(mesh: Triangulation, f) -> np.ndarray:
    """Nodal values: Clement averages inside, dual edge averages on the boundary."""
    vals = clement_vertex_values(mesh, f)
    bvert = mesh.boundary_vertices
    vals[bvert] = scott_zhang_boundary_values(mesh, f)
    return vals


def _field_cell_integrals(space: FeSpacePair, f) -> np.ndarray:
    """Per-cell integrals of a vector field, (nc, 2)."""
    vals = np.asarray(f(space.phys_points.reshape(-1, 2)), dtype=float)
    vals = vals.reshape(space.mesh.num_cells, -1, 2)
    return np.einsum("c,q,cqk->ck", space.detj, space.quad_weights, vals)


def pi_div(space: FeSpacePair, w) -> FeFunction:
    """Divergence-preserving interpolant of a vector field onto MINI.

    `w` maps (n, 2) points to (n, 2) values and must have zero trace for
    the divergence-preservation property (the nodal part alone reproduces
    global linear polynomials).
    """
    if space.pair_kind != "mini":
        raise ValueError("pi_div is implemented for the MINI pair only")
    mesh = space.mesh
    nv, nc = mesh.num_vertices, mesh.num_cells

    coeffs = np.zeros(space.n_vel_dofs)
    nodal = np.empty((nv, 2))
    for k in range(2):
        nodal[:, k] = _scott_zhang_scalar(mesh, lambda pts, k=k: np.asarray(w(pts))[:, k])

    # cell integrals of the nodal part: int_K lambda_i = |K| / 3
    sz_int = mesh.areas[:, None] * nodal[mesh.cells].mean(axis=1)
    w_int = _field_cell_integrals(space, w)
    bubble_int = 0.45 * mesh.areas  # int_K 27*l0*l1*l2 dx
    c_bubble = (w_int - sz_int) / bubble_int[:, None]

    ns = space.n_vel_scalar
    for k in range(2):
        coeffs[k * ns : k * ns + nv] = nodal[:, k]
        coeffs[k * ns + nv : (k + 1) * ns] = c_bubble[:, k]
    return space.velocity_function(coeffs)


def div_functional(space: FeSpacePair, u) -> np.ndarray:
    """``<div u, eta_j>`` against every P1 pressure basis function.

    Uses the zero-trace integration-by-parts form ``-int u . grad eta_j``
    so analytic fields and FE functions are treated identically.
    """
    if isinstance(u, FeFunction):
        from varpx.femspace import velocity_values

        vals = velocity_values(u.space, u.coeffs)
    else:
        vals = np.asarray(u(space.phys_points.reshape(-1, 2)), dtype=float)
        vals = vals.reshape(space.mesh.num_cells, -1, 2)
    # per-cell moments m[c, k] = int_K u_k * w_q, against constant grad eta
    out = np.zeros(space.mesh.num_vertices)
    contrib = np.einsum("c,q,cqk,cbk->cb", space.detj, space.quad_weights, vals, space.pres_grads)
    np.add.at(out, space.mesh.cells.ravel(), -contrib.ravel())
    return out


def rigid_motion_fit(mesh: Triangulation, cells, u):
    """L2-best rigid motion R(x) = b + omega * (-y, x) over a cell set.

    Returns ``(omega, b, residual)`` where residual is the L2 distance
    between `u` and the fitted motion over the region.
    """
    from varpx.quadrature import triangle_rule

    cells = np.atleast_1d(np.asarray(cells, dtype=np.int64))
    pts, wts = triangle_rule(8)
    v = mesh.vertices[mesh.cells[cells]]
    orig = v[:, 0]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    phys = (orig[:, None, :] + np.einsum("mij,qj->mqi", jac, pts)).reshape(-1, 2)
    wq = (2.0 * mesh.areas[cells])[:, None] * wts[None, :]
    wq = wq.reshape(-1)
    uv = np.asarray(u(phys), dtype=float)

    # basis fields: e1, e2, (-y, x)
    basis = np.zeros((3, len(phys), 2))
    basis[0, :, 0] = 1.0
    basis[1, :, 1] = 1.0
    basis[2, :, 0] = -phys[:, 1]
    basis[2, :, 1] = phys[:, 0]
    M = np.einsum("q,aqk,bqk->ab", wq, basis, basis)
    r = np.einsum("q,aqk,qk->a", wq, basis, uv)
    theta = np.linalg.solve(M, r)
    fitted = np.einsum("a,aqk->qk", theta, basis)
    residual = float(np.sqrt(np.sum(wq[:, None] * (uv - fitted) ** 2)))
    return float(theta[2]), theta[:2].copy(), residual


def random_zero_trace_field(rng: np.random.Generator, scale: float = 1.0):
    """Random smooth vector field with exactly zero boundary trace.

    Returns ``(w, grad_w)``: w maps (n, 2) -> (n, 2) and grad_w maps
    (n, 2) -> (n, 2, 2) with grad_w[:, k, j] = d w_k / d x_j.
    """
    n_modes = 3
    amps = scale * rng.normal(size=(2, n_modes))
    freqs = rng.uniform(0.5, 4.0, size=(2, n_modes, 2))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(2, n_modes))

    def bub(x, y):
        return x * (1.0 - x) * y * (1.0 - y)

    def dbub(x, y):
        return np.stack([(1.0 - 2.0 * x) * y * (1.0 - y), x * (1.0 - x) * (1.0 - 2.0 * y)], axis=-1)

    def w(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        out = np.empty((len(pts), 2))
        for k in range(2):
            arg = freqs[k, :, 0][None, :] * x[:, None] + freqs[k, :, 1][None, :] * y[:, None]
            g = np.sum(amps[k] * np.sin(arg + phases[k]), axis=1)
            out[:, k] = bub(x, y) * g
        return out

    def grad_w(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        out = np.empty((len(pts), 2, 2))
        B = bub(x, y)
        dB = dbub(x, y)
        for k in range(2):
            arg = freqs[k, :, 0][None, :] * x[:, None] + freqs[k, :, 1][None, :] * y[:, None]
            g = np.sum(amps[k] * np.sin(arg + phases[k]), axis=1)
            dg_x = np.sum(amps[k] * freqs[k, :, 0] * np.cos(arg + phases[k]), axis=1)
            dg_y = np.sum(amps[k] * freqs[k, :, 1] * np.cos(arg + phases[k]), axis=1)
            out[:, k, 0] = dB[:, 0] * g + B * dg_x
            out[:, k, 1] = dB[:, 1] * g + B * dg_y
        return out

    return w, grad_w


def _mean_abs_cell(space: FeSpacePair, vals: np.ndarray) -> np.ndarray:
    """Mean of |vals| per cell; vals shaped (nc, nq) or (nc, nq, d)."""
    a = np.abs(vals)
    if a.ndim == 3:
        a = np.linalg.norm(vals, axis=-1)
    return np.einsum("c,q,cq->c", space.detj, space.quad_weights, a) / space.mesh.areas


def verify_assumptions(space: FeSpacePair, n_samples: int = 100, seed: int = 0) -> AssumptionReport:
    """Measure divergence residuals and local stability constants for MINI.

    Samples random zero-trace fields, applies `pi_div`, and records the
    worst relative divergence residual, the W11-stability constant of
    pi_div and the L1-stability constant of the Clement operator, plus the
    reproduction error of a fixed global linear polynomial.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if space.pair_kind != "mini":
        raise ValueError("verify_assumptions targets the MINI pair")
    from varpx.femspace import velocity_values

    mesh = space.mesh
    rng = np.random.default_rng(seed)
    patches = mesh.patches
    patch_areas = np.array([mesh.areas[p].sum() for p in patches])

    max_resid = 0.0
    max_stab = 0.0
    max_clement = 0.0
    bnd_max = 0.0
    ns = space.n_vel_scalar
    bscalar = space.vel_boundary_scalar
    for _ in range(n_samples):
        w, grad_w = random_zero_trace_field(rng)
        proj = pi_div(space, w)
        lhs = div_functional(space, w)
        rhs = div_functional(space, proj)
        wnorm = float(
            np.einsum(
                "c,q,cq->",
                space.detj,
                space.quad_weights,
                np.linalg.norm(
                    np.asarray(w(space.phys_points.reshape(-1, 2))).reshape(
                        mesh.num_cells, -1, 2
                    ),
                    axis=-1,
                ),
            )
        )
        max_resid = max(max_resid, float(np.max(np.abs(lhs - rhs)) / (wnorm + 1e-300)))
        bnd = np.concatenate([proj.coeffs[bscalar], proj.coeffs[ns + bscalar]])
        bnd_max = max(bnd_max, float(np.max(np.abs(bnd), initial=0.0)))

        # W^{1,1} stability of pi_div
        wv = np.asarray(w(space.phys_points.reshape(-1, 2))).reshape(mesh.num_cells, -1, 2)
        gv = np.asarray(grad_w(space.phys_points.reshape(-1, 2))).reshape(
            mesh.num_cells, -1, 2, 2
        )
        pv = velocity_values(space, proj.coeffs)
        lhs_mean = _mean_abs_cell(space, pv)
        w_mean = _mean_abs_cell(space, wv)
        g_mean = _mean_abs_cell(space, gv.reshape(mesh.num_cells, -1, 4))
        w_int = w_mean * mesh.areas
        g_int = g_mean * mesh.areas
        for K in range(mesh.num_cells):
            pts = patches[K]
            rhs_K = (w_int[pts].sum() + mesh.h_cell[K] * g_int[pts].sum()) / patch_areas[K]
            if rhs_K > 1e-14:
                max_stab = max(max_stab, lhs_mean[K] / rhs_K)

        # L1 stability of the Clement operator on a scalar sample
        fvals = wv[..., 0] + 0.3 * wv[..., 1]
        nodal = np.empty(mesh.num_vertices)
        integrals = np.einsum("c,q,cq->c", space.detj, space.quad_weights, fvals)
        for z, patch in enumerate(mesh.vertex_patches):
            nodal[z] = integrals[patch].sum() / mesh.areas[patch].sum()
        cl_cell = np.abs(nodal[mesh.cells]).max(axis=1)  # bound on mean of |P1|
        f_mean = _mean_abs_cell(space, fvals)
        f_int = f_mean * mesh.areas
        for K in range(mesh.num_cells):
            pts = patches[K]
            rhs_K = f_int[pts].sum() / patch_areas[K]
            if rhs_K > 1e-14:
                max_clement = max(max_clement, cl_cell[K] / rhs_K)

    # reproduction of a fixed global linear polynomial
    lin = lambda pts: np.column_stack(
        [0.3 - 0.7 * pts[:, 0] + 1.1 * pts[:, 1], -0.2 + 0.4 * pts[:, 0] + 0.9 * pts[:, 1]]
    )
    proj = pi_div(space, lin)
    pv = velocity_values(space, proj.coeffs)
    exact = np.asarray(lin(space.phys_points.reshape(-1, 2))).reshape(mesh.num_cells, -1, 2)
    lin_err = float(np.max(np.abs(pv - exact)))

    return AssumptionReport(
        max_div_residual=max_resid,
        stability_constant=max_stab,
        clement_stability_constant=max_clement,
        linear_reproduction_error=lin_err,
        boundary_coeff_max=bnd_max,
        samples=n_samples,
        seed=seed,
    )


# -- inf-sup estimation --------------------------------------------------------

def _gradient_stiffness(space: FeSpacePair) -> sp.csr_matrix:
    """Vector H1-seminorm matrix on velocity dofs (full gradient)."""
    G = space.vel_grads  # (nc, nb, nq, 2)
    wq = space.detj[:, None] * space.quad_weights[None, :]
    loc = np.einsum("cq,cbqi,cdqi->cbd", wq, G, G)
    nb = space.n_local_vel
    ns = space.n_vel_scalar
    rows, cols, data = [], [], []
    dofs = space.vel_cell_dofs
    for k in range(2):
        rows.append(np.repeat(k * ns + dofs, nb, axis=1).ravel())
        cols.append(np.tile(k * ns + dofs, (1, nb)).ravel())
        data.append(loc.ravel())
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_vel_dofs, space.n_vel_dofs),
    )
    return A.tocsr()


def _div_matrix(space: FeSpacePair) -> sp.csr_matrix:
    """B[j, i] = int div xi_i * eta_j over pressure basis eta_j."""
    wq = space.detj[:, None] * space.quad_weights[None, :]
    loc = np.einsum("cq,cbqk,jq->cjkb", wq, space.vel_grads, space.pres_basis_vals)
    ns = space.n_vel_scalar
    nb = space.n_local_vel
    rows = np.repeat(space.mesh.cells[:, :, None], 2 * nb, axis=2).ravel()
    vcols = np.stack([k * ns + space.vel_cell_dofs for k in range(2)], axis=1)  # (nc,2,nb)
    cols = np.repeat(vcols.reshape(space.mesh.num_cells, 1, 2 * nb), 3, axis=1).ravel()
    data = loc.reshape(space.mesh.num_cells, 3, 2 * nb).ravel()
    B = sp.coo_matrix(
        (data, (rows, cols)), shape=(space.mesh.num_vertices, space.n_vel_dofs)
    )
    return B.tocsr()


def _pressure_mass(space: FeSpacePair) -> sp.csr_matrix:
    wq = space.detj[:, None] * space.quad_weights[None, :]
    loc = np.einsum("cq,iq,jq->cij", wq, space.pres_basis_vals, space.pres_basis_vals)
    cells = space.mesh.cells
    rows = np.repeat(cells, 3, axis=1).ravel()
    cols = np.tile(cells, (1, 3)).ravel()
    M = sp.coo_matrix(
        (loc.ravel(), (rows, cols)),
        shape=(space.mesh.num_vertices, space.mesh.num_vertices),
    )
    return M.tocsr()


def free_velocity_dofs(space: FeSpacePair) -> np.ndarray:
    """Indices of velocity dofs not constrained by the Dirichlet boundary."""
    ns = space.n_vel_scalar
    constrained = np.concatenate(
        [space.vel_boundary_scalar, ns + space.vel_boundary_scalar]
    )
    mask = np.ones(space.n_vel_dofs, dtype=bool)
    mask[constrained] = False
    return np.flatnonzero(mask)


def infsup_estimate(space: FeSpacePair, mesh: Triangulation | None = None) -> float:
    """Discrete LBB constant for the p=2 norms via a Schur eigenproblem.

    beta_h^2 is the smallest nonzero eigenvalue of  B A^-1 B^T q = l M q,
    with A the vector gradient stiffness on the Dirichlet-free velocity
    dofs, B the divergence coupling, and M the pressure mass matrix.  The
    zero eigenvalue of the constant pressure mode is discarded.
    """
    mesh = mesh if mesh is not None else space.mesh
    n_p = space.n_pres_dofs
    if n_p > 2 * 10**4:
        raise ValueError("mesh too large for the dense inf-sup eigensolve")
    free = free_velocity_dofs(space)
    A = _gradient_stiffness(space)[np.ix_(free, free)].tocsc()
    B = _div_matrix(space)[:, free].tocsc()
    M = _pressure_mass(space).toarray()
    solve = spla.factorized(A)
    S = np.empty((n_p, n_p))
    BT = B.T.toarray()
    X = np.column_stack([solve(BT[:, j]) for j in range(n_p)])
    S = B @ X
    vals = eigh(S, M, eigvals_only=True)
    vals = np.clip(vals, 0.0, None)
    return float(np.sqrt(vals[1]))
