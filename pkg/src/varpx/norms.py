"""Modulars, Luxemburg norms, quasi-norm error measures and EOC slopes.

The Luxemburg norm is computed by bisection on the strictly decreasing
map ``lambda -> int |f/lambda|^{p(x)} dx``; no closed form exists once
the exponent genuinely varies.  The velocity error is the L2 distance of
the cell-anchored maps ``F(x_K, .)`` applied to exact and discrete
symmetric gradients, exactly the quantity the convergence theory bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from varpx.exponent import ExponentField, PiecewiseExponent
from varpx.femspace import FeFunction, pressure_values, velocity_sym_gradients
from varpx.mesh import Triangulation
from varpx.orlicz import fmap_array
from varpx.quadrature import triangle_rule

__all__ = [
    "ErrorRecord",
    "modular",
    "luxemburg_norm",
    "quasinorm_error",
    "pressure_error",
    "eoc",
    "eoc_sequence",
]


@dataclass(frozen=True)
class ErrorRecord:
    """Per-level error bundle used by convergence studies."""

    h: float
    velocity_quasinorm_error: float
    pressure_luxemburg_error: float
    modular_pressure_error: float

    def __post_init__(self):
        vals = (
            self.h,
            self.velocity_quasinorm_error,
            self.pressure_luxemburg_error,
            self.modular_pressure_error,
        )
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"error record entries must be finite and nonnegative: {vals}")


def _quad_geometry(mesh: Triangulation, degree: int):
    pts, wts = triangle_rule(degree)
    v = mesh.vertices[mesh.cells]
    orig, jac = v[:, 0], np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    phys = orig[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)
    wq = (2.0 * mesh.areas)[:, None] * wts[None, :]
    return phys, wq


def _field_values(mesh, f, phys):
    if callable(f):
        return np.asarray(f(phys.reshape(-1, 2)), dtype=float).reshape(phys.shape[:2])
    arr = np.asarray(f, dtype=float)
    if arr.shape != phys.shape[:2]:
        raise ValueError(f"value array shape {arr.shape} does not match quadrature layout")
    return arr


def _exponent_values(mesh, exponent, phys):
    if isinstance(exponent, PiecewiseExponent):
        return exponent.values[:, None]
    if isinstance(exponent, ExponentField) or callable(exponent):
        return np.asarray(exponent(phys.reshape(-1, 2)), dtype=float).reshape(phys.shape[:2])
    return np.asarray(float(exponent))[None, None]


def modular(mesh: Triangulation, f, exponent, degree: int = 8) -> float:
    """``int_Omega |f(x)|^{p(x)} dx`` by composite quadrature.

    `f` is a callable on (n, 2) points or a (num_cells, nq) value array;
    `exponent` is an ExponentField, a PiecewiseExponent or a constant.
    """
    phys, wq = _quad_geometry(mesh, degree)
    vals = np.abs(_field_values(mesh, f, phys))
    pvals = _exponent_values(mesh, exponent, phys)
    out = float(np.sum(wq * vals**pvals))
    if not np.isfinite(out):
        raise ValueError("modular is not finite")
    return out


def luxemburg_norm(
    mesh: Triangulation, f, exponent, degree: int = 8, rtol: float = 1e-10
) -> float:
    """Luxemburg norm ``inf { lam > 0 : modular(f / lam) <= 1 }``."""
    phys, wq = _quad_geometry(mesh, degree)
    vals = np.abs(_field_values(mesh, f, phys))
    pvals = np.broadcast_to(_exponent_values(mesh, exponent, phys), vals.shape)
    if not vals.any():
        return 0.0

    def mod(lam):
        return float(np.sum(wq * (vals / lam) ** pvals))

    lo = hi = max(float(np.max(vals)), 1e-300)
    if mod(hi) > 1.0:
        for _ in range(2000):
            hi *= 2.0
            if mod(hi) <= 1.0:
                break
    else:
        for _ in range(2000):
            lo *= 0.5
            if mod(lo) > 1.0:
                break
        else:
            return 0.0
    lo = min(lo, hi / 2.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mod(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def quasinorm_error(
    exact_sym_grad,
    v_h: FeFunction,
    piecewise: PiecewiseExponent,
    kappa: float,
    field: ExponentField | None = None,
) -> float:
    """Quasi-norm distance ``|| F_T(., Dv) - F_T(., Dv_h) ||_2``.

    Uses the cell-anchored exponent values of `piecewise`; passing `field`
    switches to quadrature-point exponents (diagnostic variant only).
    """
    space = v_h.space
    phys = space.phys_points
    wq = space.detj[:, None] * space.quad_weights[None, :]
    D_exact = np.asarray(exact_sym_grad(phys.reshape(-1, 2)), dtype=float).reshape(
        *phys.shape[:2], 2, 2
    )
    D_h = velocity_sym_gradients(space, v_h.coeffs)
    if field is not None:
        pvals = field(phys.reshape(-1, 2)).reshape(phys.shape[:2])
    else:
        pvals = piecewise.values[:, None]
    dF = fmap_array(kappa, pvals, D_exact) - fmap_array(kappa, pvals, D_h)
    return float(np.sqrt(np.sum(wq * np.sum(dF * dF, axis=(-2, -1)))))


def pressure_error(
    exact_q, q_h: FeFunction, piecewise: PiecewiseExponent
) -> tuple[float, float]:
    """Pressure error in the conjugate localized exponent.

    Returns ``(luxemburg, modular)`` of ``q - q_h`` measured in
    ``p_T'(x) = p_T(x) / (p_T(x) - 1)``.
    """
    space = q_h.space
    mesh = space.mesh
    phys = space.phys_points
    wq = space.detj[:, None] * space.quad_weights[None, :]
    vals = np.abs(
        np.asarray(exact_q(phys.reshape(-1, 2)), dtype=float).reshape(phys.shape[:2])
        - pressure_values(space, q_h.coeffs)
    )
    pconj = piecewise.conjugate_values()[:, None]
    mod = float(np.sum(wq * vals**pconj))
    if not vals.any():
        return 0.0, 0.0

    def mod_at(lam):
        return float(np.sum(wq * (vals / lam) ** pconj))

    lo = hi = max(float(np.max(vals)), 1e-300)
    if mod_at(hi) > 1.0:
        while mod_at(hi) > 1.0:
            hi *= 2.0
    else:
        while mod_at(lo) <= 1.0 and lo > 1e-280:
            lo *= 0.5
    lo = min(lo, hi / 2.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mod_at(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * hi:
            break
    return 0.5 * (lo + hi), mod


def eoc_sequence(hs, errors) -> list[float]:
    """Slopes log(e_i / e_{i+1}) / log(h_i / h_{i+1}) for consecutive levels."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(hs) < 2:
        raise ValueError("need at least two records")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    if np.any(errors <= 0):
        raise ValueError("errors must be positive to take logarithms")
    return list(np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:]))


def eoc(records: list[ErrorRecord]) -> dict[str, list[float]]:
    """EOC slopes per error column for a list of `ErrorRecord`s."""
    hs = [r.h for r in records]
    return {
        "velocity": eoc_sequence(hs, [r.velocity_quasinorm_error for r in records]),
        "pressure_luxemburg": eoc_sequence(
            hs, [r.pressure_luxemburg_error for r in records]
        ),
        "pressure_modular": eoc_sequence(
            hs, [r.modular_pressure_error for r in records]
        ),
    }
