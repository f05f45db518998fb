"""Variable exponent fields p(x) and their cellwise localization.

An `ExponentField` wraps a pointwise evaluator together with the bounds
p-, p+ and Holder data (alpha, [p]_alpha).  `localize` replaces the field
by the piecewise-constant exponent anchored at per-cell minimizers over a
committed sample set, which is how the discrete stress is localized.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from varpx.mesh import Triangulation
from varpx.quadrature import triangle_rule

__all__ = [
    "ExponentField",
    "PiecewiseExponent",
    "localize",
    "conjugate_field",
    "log_holder_estimate",
    "make_field",
]


@dataclass(frozen=True)
class ExponentField:
    """Variable exponent with bounds and Holder metadata.

    ``evaluator`` maps an (n, 2) array of points to (n,) exponent values.
    ``holder_seminorm`` is [p]_alpha; when it is only an estimate set
    ``seminorm_estimated`` so invariant checks treat it with slack.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    p_minus: float
    p_plus: float
    alpha: float = 1.0
    holder_seminorm: float = 0.0
    seminorm_estimated: bool = False
    name: str = "custom"

    def __post_init__(self):
        if not (1.0 < self.p_minus <= self.p_plus < np.inf):
            raise ValueError(
                f"need 1 < p_minus <= p_plus < inf, got ({self.p_minus}, {self.p_plus})"
            )
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(points)), dtype=float)


@dataclass(frozen=True)
class PiecewiseExponent:
    """Cellwise-constant exponent p_T with per-cell anchor points x_K."""

    values: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "anchors", np.asarray(self.anchors, dtype=float))
        if len(self.values) != len(self.anchors):
            raise ValueError("values and anchors must have equal length")

    def conjugate_values(self) -> np.ndarray:
        return self.values / (self.values - 1.0)

    def as_field(self, mesh: Triangulation) -> ExponentField:
        """Field that evaluates to the containing cell's anchored value."""
        values = self.values

        def evaluator(points):
            return values[mesh.locate(points)]

        return ExponentField(
            evaluator=evaluator,
            p_minus=float(values.min()),
            p_plus=float(values.max()),
            alpha=1.0,
            holder_seminorm=0.0,
            seminorm_estimated=True,
            name="piecewise",
        )


def _cell_sample_points(mesh: Triangulation, degree: int = 8) -> np.ndarray:
    """Committed per-cell sample set: vertices, quadrature nodes, barycenter."""
    ref, _ = triangle_rule(degree)
    ref = np.vstack([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], ref, [1.0 / 3.0, 1.0 / 3.0]])
    v = mesh.vertices[mesh.cells]  # (nc, 3, 2)
    orig = v[:, 0]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    return orig[:, None, :] + np.einsum("cij,qj->cqi", jac, ref)


def localize(field: ExponentField, mesh: Triangulation) -> PiecewiseExponent:
    """Anchor the exponent at the per-cell minimizer over the sample set."""
    pts = _cell_sample_points(mesh)
    nc, ns, _ = pts.shape
    vals = field(pts.reshape(-1, 2)).reshape(nc, ns)
    arg = vals.argmin(axis=1)
    rows = np.arange(nc)
    return PiecewiseExponent(values=vals[rows, arg], anchors=pts[rows, arg])


def conjugate_field(field: ExponentField) -> ExponentField:
    """The pointwise conjugate exponent p'(x) = p(x)/(p(x)-1)."""
    if field.p_minus <= 1.0:
        raise ValueError("conjugate requires p_minus > 1")
    inner = field.evaluator

    def evaluator(points):
        p = np.asarray(inner(points), dtype=float)
        return p / (p - 1.0)

    # |d(p')| = |dp| / (p-1)^2, so the seminorm scales by 1/(p_minus - 1)^2
    return ExponentField(
        evaluator=evaluator,
        p_minus=field.p_plus / (field.p_plus - 1.0),
        p_plus=field.p_minus / (field.p_minus - 1.0),
        alpha=field.alpha,
        holder_seminorm=field.holder_seminorm / (field.p_minus - 1.0) ** 2,
        seminorm_estimated=field.seminorm_estimated or field.holder_seminorm > 0.0,
        name=f"conjugate({field.name})",
    )


def log_holder_estimate(field: ExponentField, n_pairs: int, seed: int = 0) -> float:
    """Empirical lower bound for the log-Holder constant of 1/p.

    Samples `n_pairs` point pairs in the closed unit square and maximizes
    ``|1/p(x) - 1/p(y)| * log(e + 1/|x - y|)``.
    """
    if n_pairs < 1000:
        raise ValueError("n_pairs must be at least 1000")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n_pairs, 2))
    y = rng.uniform(0.0, 1.0, size=(n_pairs, 2))
    d = np.linalg.norm(x - y, axis=1)
    keep = d > 0
    x, y, d = x[keep], y[keep], d[keep]
    diff = np.abs(1.0 / field(x) - 1.0 / field(y))
    return float(np.max(diff * np.log(np.e + 1.0 / d), initial=0.0))


# -- built-in field catalog ----------------------------------------------------

def make_field(name: str, **params) -> ExponentField:
    """Catalog of exponent fields addressable from configs.

    - ``constant``: p_c
    - ``sine2d``: p_c + delta * sin(2 pi f x) * sin(2 pi f y)
    - ``holder_cusp``: p_c - delta/2 + delta * |x - center|^alpha
    """
    if name == "constant":
        p_c = float(params.get("p_c", 2.0))
        return ExponentField(
            evaluator=lambda pts: np.full(len(np.atleast_2d(pts)), p_c),
            p_minus=p_c,
            p_plus=p_c,
            alpha=1.0,
            holder_seminorm=0.0,
            name="constant",
        )
    if name == "sine2d":
        p_c = float(params.get("p_c", 2.0))
        delta = float(params.get("delta", 0.3))
        freq = float(params.get("frequency", 1.0))
        if delta < 0 or p_c - delta <= 1.0:
            raise ValueError("sine2d requires p_c - delta > 1")

        def evaluator(pts):
            pts = np.atleast_2d(pts)
            return p_c + delta * np.sin(2 * np.pi * freq * pts[:, 0]) * np.sin(
                2 * np.pi * freq * pts[:, 1]
            )

        return ExponentField(
            evaluator=evaluator,
            p_minus=p_c - delta,
            p_plus=p_c + delta,
            alpha=1.0,
            holder_seminorm=2.0 * np.pi * freq * delta,
            name="sine2d",
        )
    if name == "holder_cusp":
        p_c = float(params.get("p_c", 2.0))
        delta = float(params.get("delta", 0.3))
        alpha = float(params.get("alpha", 0.5))
        center = np.asarray(params.get("center", (0.5, 0.5)), dtype=float)
        if p_c - delta / 2.0 <= 1.0:
            raise ValueError("holder_cusp requires p_c - delta/2 > 1")
        rmax = max(
            np.linalg.norm(corner - center)
            for corner in np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        )

        def evaluator(pts):
            pts = np.atleast_2d(pts)
            r = np.linalg.norm(pts - center, axis=1)
            return p_c - delta / 2.0 + delta * r**alpha

        return ExponentField(
            evaluator=evaluator,
            p_minus=p_c - delta / 2.0,
            p_plus=p_c - delta / 2.0 + delta * rmax**alpha,
            alpha=alpha,
            holder_seminorm=delta,
            name="holder_cusp",
        )
    raise ValueError(f"unknown exponent field {name!r}")


def blend_toward_two(field: ExponentField, theta: float) -> ExponentField:
    """Continuation blend p_theta = 2 + theta * (p - 2); theta=1 is `field`."""
    if not (0.0 <= theta <= 1.0):
        raise ValueError("theta must be in [0, 1]")
    inner = field.evaluator

    def evaluator(points):
        return 2.0 + theta * (np.asarray(inner(points), dtype=float) - 2.0)

    lo = 2.0 + theta * (field.p_minus - 2.0)
    hi = 2.0 + theta * (field.p_plus - 2.0)
    return replace(
        field,
        evaluator=evaluator,
        p_minus=min(lo, hi),
        p_plus=max(lo, hi),
        holder_seminorm=theta * field.holder_seminorm,
        name=f"blend({field.name},{theta})",
    )
