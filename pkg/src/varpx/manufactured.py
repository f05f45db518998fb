"""Manufactured velocity/pressure pairs on the unit square.

Velocities are 2D curls of scalar potentials, hence exactly solenoidal,
and the potentials vanish to second order on the boundary so the trace is
exactly zero.  Analytic symmetric gradients are provided so error
measures never differentiate numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["ManufacturedPair", "make_solution", "SOLUTION_IDS"]

SOLUTION_IDS = ("curl_bubble_sin", "zero")


@dataclass(frozen=True)
class ManufacturedPair:
    """Analytic solution pair with the derivatives needed by the harness.

    ``velocity``: (n, 2) -> (n, 2); ``sym_grad``: (n, 2) -> (n, 2, 2);
    ``pressure``: (n, 2) -> (n,), mean zero over the unit square.
    """

    name: str
    velocity: Callable[[np.ndarray], np.ndarray]
    sym_grad: Callable[[np.ndarray], np.ndarray]
    pressure: Callable[[np.ndarray], np.ndarray]


def _g(t):
    return t * t * (1.0 - t) ** 2


def _dg(t):
    return 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def _ddg(t):
    return 2.0 * (1.0 - 6.0 * t + 6.0 * t * t)


def make_solution(name: str) -> ManufacturedPair:
    """Catalog lookup; see `SOLUTION_IDS`."""
    if name == "curl_bubble_sin":
        # psi = x^2 (1-x)^2 y^2 (1-y)^2,  v = curl psi = (psi_y, -psi_x)
        def velocity(pts):
            pts = np.atleast_2d(pts)
            x, y = pts[:, 0], pts[:, 1]
            return np.column_stack([_g(x) * _dg(y), -_dg(x) * _g(y)])

        def sym_grad(pts):
            pts = np.atleast_2d(pts)
            x, y = pts[:, 0], pts[:, 1]
            out = np.empty((len(pts), 2, 2))
            out[:, 0, 0] = _dg(x) * _dg(y)
            out[:, 1, 1] = -_dg(x) * _dg(y)
            off = 0.5 * (_g(x) * _ddg(y) - _ddg(x) * _g(y))
            out[:, 0, 1] = off
            out[:, 1, 0] = off
            return out

        def pressure(pts):
            pts = np.atleast_2d(pts)
            return np.sin(2.0 * np.pi * pts[:, 0]) * np.cos(2.0 * np.pi * pts[:, 1])

        return ManufacturedPair("curl_bubble_sin", velocity, sym_grad, pressure)

    if name == "zero":
        def velocity(pts):
            return np.zeros((len(np.atleast_2d(pts)), 2))

        def sym_grad(pts):
            return np.zeros((len(np.atleast_2d(pts)), 2, 2))

        def pressure(pts):
            return np.zeros(len(np.atleast_2d(pts)))

        return ManufacturedPair("zero", velocity, sym_grad, pressure)

    raise ValueError(f"unknown manufactured solution {name!r}")
