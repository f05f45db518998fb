"""Quadrature rules on the reference triangle and reference edge.

The triangle rules are conical-product Gauss rules: a Gauss-Legendre rule
in the collapsed direction times a Gauss-Jacobi rule (weight 1-x) in the
radial direction.  An m-point-per-direction rule integrates all bivariate
polynomials of total degree <= 2m-1 exactly on the reference triangle
T = {(x, y) : x >= 0, y >= 0, x + y <= 1}.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points and weights exact for polynomials of total `degree`.

    Returns
    -------
    points : (nq, 2) ndarray
        Coordinates on the reference triangle.
    weights : (nq,) ndarray
        Positive weights summing to 1/2 (the reference area).
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    m = max(1, (degree + 2) // 2)  # 2m-1 >= degree

    # Legendre on [0, 1]
    xg, wg = roots_legendre(m)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg

    # Jacobi (alpha=1, beta=0) on [0, 1]: integrates (1-t) f(t) dt
    xj, wj = roots_jacobi(m, 1.0, 0.0)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj

    # x = xi, y = eta * (1 - xi); Jacobian (1 - xi) absorbed by Jacobi weight
    xi = np.repeat(xj, m)
    eta = np.tile(xg, m)
    pts = np.column_stack([xi, eta * (1.0 - xi)])
    wts = np.repeat(wj, m) * np.tile(wg, m)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of `degree`."""
    m = max(1, (degree + 2) // 2)
    x, w = roots_legendre(m)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def reference_monomial_integral(a: int, b: int) -> float:
    """Exact value of the integral of x**a * y**b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
