"""Discrete p(x)-Stokes problems: assembly, saddle-point solves, and
damped Newton with continuation.

The discrete unknown is z = [velocity free dofs, pressure dofs, lambda]
where lambda is the Lagrange multiplier of the zero-mean pressure
constraint.  The residual rows are

    r_v = <S_T(., Dv_h), D xi_i> - <div xi_i, q_h> - <f, xi_i>
    r_q = -<div v_h, eta_j> + lambda <eta_j, 1>
    r_l = <q_h, 1>

so the Jacobian [[A, -B^T, 0], [-B, 0, g], [0, g^T, 0]] is symmetric.
The stress may use the cell-anchored exponent (stress_mode "localized",
the discrete problem proper) or the quadrature-point exponent
("pointwise", for quantifying the localization effect).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from varpx.exponent import ExponentField, PiecewiseExponent, localize
from varpx.femspace import FeFunction, FeSpacePair, build_pair, velocity_sym_gradients
from varpx.manufactured import ManufacturedPair
from varpx.mesh import Triangulation

__all__ = [
    "FeProblem",
    "RhsFunctional",
    "DiscreteSolution",
    "NewtonConfig",
    "SaddleSolveError",
    "NewtonError",
    "manufactured_rhs",
    "explicit_rhs",
    "assemble_residual",
    "assemble_jacobian",
    "solve_saddle",
    "newton_solve",
]


class SaddleSolveError(RuntimeError):
    """Sparse factorization or solve failure, with diagnostics attached."""


class NewtonError(RuntimeError):
    """Newton did not converge; carries the residual history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class RhsFunctional:
    """Right-hand side: a manufactured pair or an explicit pointwise force."""

    kind: str  # "manufactured" or "explicit"
    pair: Optional[ManufacturedPair] = None
    force: Optional[Callable[[np.ndarray], np.ndarray]] = None


def manufactured_rhs(pair: ManufacturedPair, mesh: Triangulation, quad_degree: int = 8) -> RhsFunctional:
    """Variational right-hand side making `pair` the exact weak solution.

    ``<f, xi> = int S(x, Dv(x)) : D xi dx - int q div xi dx`` evaluated with
    the assembly quadrature, so no strong-form differentiation of S is
    needed.  Rejects pairs that are not solenoidal / zero-trace / mean-zero.
    """
    from varpx.quadrature import triangle_rule

    pts, wts = triangle_rule(quad_degree)
    v = mesh.vertices[mesh.cells]
    orig, jac = v[:, 0], np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    phys = (orig[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)).reshape(-1, 2)
    wq = ((2.0 * mesh.areas)[:, None] * wts[None, :]).reshape(-1)

    D = np.asarray(pair.sym_grad(phys), dtype=float)
    div_sq = float(np.sum(wq * (D[:, 0, 0] + D[:, 1, 1]) ** 2))
    if div_sq > 1e-20:
        raise ValueError(f"exact velocity is not solenoidal: int |div v|^2 = {div_sq:.3e}")
    t = np.linspace(0.0, 1.0, 97)
    bpts = np.vstack(
        [
            np.column_stack([t, np.zeros_like(t)]),
            np.column_stack([t, np.ones_like(t)]),
            np.column_stack([np.zeros_like(t), t]),
            np.column_stack([np.ones_like(t), t]),
        ]
    )
    bmax = float(np.max(np.abs(pair.velocity(bpts))))
    if bmax > 1e-14:
        raise ValueError(f"exact velocity trace is not zero: max boundary |v| = {bmax:.3e}")
    qmean = float(np.sum(wq * pair.pressure(phys)))
    if abs(qmean) > 1e-12:
        raise ValueError(f"exact pressure is not mean-zero: mean = {qmean:.3e}")
    return RhsFunctional(kind="manufactured", pair=pair)


def explicit_rhs(force: Callable[[np.ndarray], np.ndarray]) -> RhsFunctional:
    return RhsFunctional(kind="explicit", force=force)


@dataclass
class FeProblem:
    """A discrete p(x)-Stokes problem on a fixed mesh and element pair."""

    mesh: Triangulation
    exponent: ExponentField
    kappa: float
    mu: float
    pair_kind: str
    rhs: RhsFunctional
    stress_mode: str = "localized"
    quad_degree: int = 8
    piecewise: Optional[PiecewiseExponent] = None
    _ctx: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.stress_mode not in ("localized", "pointwise"):
            raise ValueError(f"unknown stress_mode {self.stress_mode!r}")
        if not (0.0 <= self.kappa <= 1.0):
            raise ValueError("kappa must be in [0, 1]")
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if self.piecewise is None:
            self.piecewise = localize(self.exponent, self.mesh)

    @property
    def context(self) -> "_Context":
        if self._ctx is None:
            self._ctx = _Context(self)
        return self._ctx


@dataclass
class DiscreteSolution:
    velocity: FeFunction
    pressure: FeFunction
    newton_iterations: int
    final_residual: float
    lam: float = 0.0
    residual_history: list = field(default_factory=list)
    continuation_stages: int = 0


class _Context:
    """Precomputed assembly data for one FeProblem."""

    def __init__(self, problem: FeProblem):
        self.problem = problem
        space = build_pair(problem.mesh, problem.pair_kind, problem.quad_degree)
        self.space = space
        mesh = problem.mesh

        ns = space.n_vel_scalar
        constrained = np.concatenate(
            [space.vel_boundary_scalar, ns + space.vel_boundary_scalar]
        )
        mask = np.ones(space.n_vel_dofs, dtype=bool)
        mask[constrained] = False
        self.free = np.flatnonzero(mask)
        self.full2free = -np.ones(space.n_vel_dofs, dtype=np.int64)
        self.full2free[self.free] = np.arange(len(self.free))
        self.nvf = len(self.free)
        self.np_ = space.n_pres_dofs

        # quadrature weights combined with Jacobians, (nc, nq)
        self.wq = space.detj[:, None] * space.quad_weights[None, :]

        # exponent arrays
        self.p_loc = problem.piecewise.values.copy()  # (nc,)
        pts = space.phys_points.reshape(-1, 2)
        self.p_pt = problem.exponent(pts).reshape(mesh.num_cells, -1)  # (nc, nq)
        self.p_eff = (
            np.broadcast_to(self.p_loc[:, None], self.p_pt.shape)
            if problem.stress_mode == "localized"
            else self.p_pt
        )

        # divergence coupling and mean vector
        from varpx.projection import _div_matrix, _pressure_mass

        B_full = _div_matrix(space)
        self.B = B_full[:, self.free].tocsr()
        M = _pressure_mass(space)
        self.g = np.asarray(M @ np.ones(self.np_))  # g_j = int eta_j dx

        # local-to-global scatter for the velocity block
        nb = space.n_local_vel
        dofs = space.vel_cell_dofs
        vglob = np.concatenate([dofs, ns + dofs], axis=1)  # (nc, 2nb), comp-major
        self.vglob = vglob
        rows = np.repeat(vglob, 2 * nb, axis=1).ravel()
        cols = np.tile(vglob, (1, 2 * nb)).ravel()
        rfree = self.full2free[rows]
        cfree = self.full2free[cols]
        keep = (rfree >= 0) & (cfree >= 0)
        self.A_keep = keep
        self.A_rows = rfree[keep]
        self.A_cols = cfree[keep]

        self.f_free = self._assemble_rhs()
        self.res_scale = float(np.linalg.norm(self.f_free))
        if self.res_scale == 0.0:
            self.res_scale = 1.0

    # -- right-hand side --------------------------------------------------------

    def _assemble_rhs(self) -> np.ndarray:
        from varpx.orlicz import stress_array

        problem, space = self.problem, self.space
        G = space.vel_grads
        rhs = self.problem.rhs
        if rhs.kind == "manufactured":
            pts = space.phys_points.reshape(-1, 2)
            Dv = np.asarray(rhs.pair.sym_grad(pts)).reshape(*self.p_pt.shape, 2, 2)
            qv = np.asarray(rhs.pair.pressure(pts)).reshape(self.p_pt.shape)
            S = stress_array(problem.kappa, problem.mu, self.p_pt, Dv)
            loc = np.einsum("cq,cqkj,cbqj->ckb", self.wq, S, G)
            loc -= np.einsum("cq,cq,cbqk->ckb", self.wq, qv, G)
        elif rhs.kind == "explicit":
            pts = space.phys_points.reshape(-1, 2)
            fv = np.asarray(rhs.force(pts)).reshape(*self.p_pt.shape, 2)
            loc = np.einsum("cq,cqk,bq->ckb", self.wq, fv, space.vel_basis_vals)
        else:
            raise ValueError(f"unknown rhs kind {rhs.kind!r}")
        full = np.zeros(space.n_vel_dofs)
        nb = space.n_local_vel
        np.add.at(full, self.vglob.ravel(), loc.reshape(-1, 2 * nb).ravel())
        return full[self.free]

    # -- state packing ------------------------------------------------------------

    def pack(self, v_full, q, lam) -> np.ndarray:
        return np.concatenate([v_full[self.free], q, [lam]])

    def unpack(self, z):
        v_full = np.zeros(self.space.n_vel_dofs)
        v_full[self.free] = z[: self.nvf]
        q = z[self.nvf : self.nvf + self.np_]
        lam = z[-1]
        return v_full, q, lam

    # -- residual and Jacobian ------------------------------------------------------

    def residual(self, z, p_eff=None) -> np.ndarray:
        from varpx.orlicz import stress_array

        problem, space = self.problem, self.space
        p_eff = self.p_eff if p_eff is None else p_eff
        v_full, q, lam = self.unpack(z)
        Dv = velocity_sym_gradients(space, v_full)
        S = stress_array(problem.kappa, problem.mu, p_eff, Dv)
        loc = np.einsum("cq,cqkj,cbqj->ckb", self.wq, S, space.vel_grads)
        full = np.zeros(space.n_vel_dofs)
        nb = space.n_local_vel
        np.add.at(full, self.vglob.ravel(), loc.reshape(-1, 2 * nb).ravel())
        r_v = full[self.free] - self.B.T @ q - self.f_free
        r_q = -(self.B @ z[: self.nvf]) + self.g * lam
        r_l = np.array([self.g @ q])
        return np.concatenate([r_v, r_q, r_l])

    def jacobian(self, z, p_eff=None) -> sp.csc_matrix:
        problem, space = self.problem, self.space
        p_eff = self.p_eff if p_eff is None else p_eff
        kappa, mu = problem.kappa, problem.mu
        v_full, _, _ = self.unpack(z)
        Dv = velocity_sym_gradients(space, v_full)
        n = np.sqrt(np.sum(Dv * Dv, axis=(-2, -1)))  # (nc, nq)
        if kappa == 0.0 and np.any((p_eff < 2.0) & (n < 1e-14)):
            from varpx.orlicz import SingularJacobianError

            raise SingularJacobianError(
                "stress Jacobian unbounded: kappa = 0, p < 2 at a symmetric-gradient zero"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            a = mu * (kappa + n) ** (p_eff - 2.0)
            a = np.where((n == 0.0) & (kappa == 0.0), np.where(p_eff == 2.0, mu, 0.0), a)
            bhat = mu * (p_eff - 2.0) * (kappa + n) ** (p_eff - 3.0) * n
            bhat = np.where(n == 0.0, 0.0, bhat)
        safe_n = np.where(n == 0.0, 1.0, n)
        etahat = Dv / safe_n[..., None, None]

        G = space.vel_grads
        wa = self.wq * a
        nb = space.n_local_vel
        nc = space.mesh.num_cells
        M1 = np.einsum("cq,cbqi,cdqi->cbd", wa, G, G)
        M2 = np.einsum("cq,cbql,cdqk->cbdkl", wa, G, G)
        vproj = np.einsum("cqkj,cbqj->ckbq", etahat, G)
        A3 = np.einsum("cq,ckbq,cldq->ckbld", self.wq * bhat, vproj, vproj)

        A_loc = np.zeros((nc, 2, nb, 2, nb))
        for k in range(2):
            A_loc[:, k, :, k, :] += 0.5 * M1
        A_loc += 0.5 * np.transpose(M2, (0, 3, 1, 4, 2))  # [c,k,b,l,d] = M2[c,b,d,k,l]
        A_loc += A3
        data = A_loc.reshape(nc, 2 * nb, 2 * nb).ravel()[self.A_keep]
        A = sp.coo_matrix((data, (self.A_rows, self.A_cols)), shape=(self.nvf, self.nvf))

        g_col = sp.csc_matrix(self.g[:, None])
        J = sp.bmat(
            [
                [A.tocsc(), -self.B.T, None],
                [-self.B, None, g_col],
                [None, g_col.T, None],
            ],
            format="csc",
        )
        return J


def _state_to_z(problem: FeProblem, state: DiscreteSolution) -> np.ndarray:
    ctx = problem.context
    return ctx.pack(state.velocity.coeffs, state.pressure.coeffs, state.lam)


def assemble_residual(problem: FeProblem, state: DiscreteSolution) -> np.ndarray:
    """Galerkin residual at `state`, in the packed free-dof layout."""
    return problem.context.residual(_state_to_z(problem, state))


def assemble_jacobian(problem: FeProblem, state: DiscreteSolution) -> sp.csc_matrix:
    """Bordered saddle-point Jacobian at `state` (sparse, symmetric)."""
    return problem.context.jacobian(_state_to_z(problem, state))


def solve_saddle(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Sparse direct solve with a relative-residual guarantee of 1e-10."""
    matrix = matrix.tocsc()
    try:
        x = spla.spsolve(matrix, rhs)
    except Exception as exc:  # pragma: no cover - scipy raises rarely here
        raise SaddleSolveError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        diag = np.abs(matrix.diagonal())
        raise SaddleSolveError(
            "saddle solve produced non-finite entries "
            f"(min |diag| = {diag.min():.3e}, max |diag| = {diag.max():.3e})"
        )
    rnorm = float(np.linalg.norm(matrix @ x - rhs))
    scale = float(np.linalg.norm(rhs))
    if scale > 0 and rnorm > 1e-10 * max(scale, 1.0):
        # one step of iterative refinement before giving up
        x = x + spla.spsolve(matrix, rhs - matrix @ x)
        rnorm = float(np.linalg.norm(matrix @ x - rhs))
        if rnorm > 1e-8 * max(scale, 1.0):
            raise SaddleSolveError(
                f"saddle solve residual {rnorm:.3e} exceeds tolerance (rhs norm {scale:.3e})"
            )
    return x


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 30
    damping: bool = True
    continuation: bool = True
    theta_schedule: tuple = (0.25, 0.5, 0.75, 1.0)
    kappa_floor: float = 1e-3
    verbose: bool = False


def _newton_loop(ctx: _Context, z, p_eff, cfg: NewtonConfig, history):
    """Damped Newton on one continuation stage.  Returns (z, iters, ok)."""
    res = ctx.residual(z, p_eff)
    rnorm = float(np.linalg.norm(res))
    history.append(rnorm)
    iters = 0
    for _ in range(cfg.max_iter):
        if rnorm <= cfg.tol * ctx.res_scale:
            return z, iters, True
        J = ctx.jacobian(z, p_eff)
        try:
            step = solve_saddle(J, -res)
        except SaddleSolveError:
            return z, iters, False
        lam_ls = 1.0
        accepted = False
        while lam_ls >= 2.0**-24:
            z_new = z + lam_ls * step
            res_new = ctx.residual(z_new, p_eff)
            rnorm_new = float(np.linalg.norm(res_new))
            if np.isfinite(rnorm_new) and rnorm_new <= (1.0 - 1e-4 * lam_ls) * rnorm:
                accepted = True
                break
            if not cfg.damping:
                break
            lam_ls *= 0.5
        if not accepted:
            return z, iters, False
        z, res, rnorm = z_new, res_new, rnorm_new
        iters += 1
        history.append(rnorm)
        if cfg.verbose:
            print(f"    newton it {iters}: |R| = {rnorm:.3e}")
    return z, iters, rnorm <= cfg.tol * ctx.res_scale


def newton_solve(
    problem: FeProblem,
    config: NewtonConfig | None = None,
    initial: DiscreteSolution | None = None,
) -> DiscreteSolution:
    """Solve the discrete problem; engage continuation if plain Newton stalls.

    Continuation first blends the exponent, p_theta = 2 + theta (p - 2)
    with theta in the configured schedule, then (for very small kappa)
    walks kappa down from `kappa_floor`, warm-starting every stage.
    Raises `NewtonError` with the residual history if everything fails.
    """
    cfg = config or NewtonConfig()
    if problem.kappa <= 0.0:
        raise ValueError("newton_solve requires kappa > 0")
    ctx = problem.context
    z = (
        ctx.pack(initial.velocity.coeffs, initial.pressure.coeffs, initial.lam)
        if initial is not None
        else np.zeros(ctx.nvf + ctx.np_ + 1)
    )
    history: list[float] = []
    total_iters = 0
    stages = 0

    z_try, iters, ok = _newton_loop(ctx, z, ctx.p_eff, cfg, history)
    total_iters += iters
    if ok:
        z = z_try
    elif cfg.continuation:
        z_stage = z
        for theta in cfg.theta_schedule:
            p_stage = 2.0 + theta * (ctx.p_eff - 2.0)
            z_stage, iters, ok = _newton_loop(ctx, z_stage, p_stage, cfg, history)
            total_iters += iters
            stages += 1
            if not ok and theta < 1.0:
                continue
            if not ok and theta == 1.0 and problem.kappa < cfg.kappa_floor:
                kappas = []
                k = cfg.kappa_floor
                while k > problem.kappa:
                    kappas.append(k)
                    k *= 0.1
                kappas.append(problem.kappa)
                base_kappa = problem.kappa
                try:
                    for kap in kappas:
                        problem.kappa = kap
                        z_stage, iters, ok = _newton_loop(ctx, z_stage, ctx.p_eff, cfg, history)
                        total_iters += iters
                        stages += 1
                        if not ok:
                            break
                finally:
                    problem.kappa = base_kappa
        if not ok:
            raise NewtonError(
                f"Newton did not converge after continuation ({total_iters} iterations)",
                history,
            )
        z = z_stage
    else:
        raise NewtonError(f"Newton did not converge in {iters} iterations", history)

    v_full, q, lam = ctx.unpack(z)
    final = float(np.linalg.norm(ctx.residual(z))) / ctx.res_scale
    qmean = float(ctx.g @ q)
    if abs(qmean) > 1e-12 * max(1.0, float(np.linalg.norm(q))):
        q = q - qmean / ctx.g.sum()
    return DiscreteSolution(
        velocity=ctx.space.velocity_function(v_full),
        pressure=ctx.space.pressure_function(q),
        newton_iterations=total_iters,
        final_residual=final,
        lam=float(lam),
        residual_history=history,
        continuation_stages=stages,
    )
