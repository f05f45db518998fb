"""Finite element toolkit for the variable-exponent p(x)-Stokes system.

The package solves the steady Stokes-type system with extra stress
``S(x, Dv) = mu * (kappa + |Dv|)**(p(x)-2) * Dv`` on the unit square,
measures velocity errors in the natural quasi-norm distance and pressure
errors in Luxemburg norms, and ships a convergence/verification harness
(`varpx.cli`) driven by JSON configs.

Submodules
----------
- ``varpx.mesh``: structured meshes, refinement, patches.
- ``varpx.exponent``: variable exponent fields and cellwise localization.
- ``varpx.orlicz``: the N-function kernel (phi, shifts, conjugates) and
  the tensor maps stress / fmap with their derivatives.
- ``varpx.femspace``: MINI and Taylor-Hood pairs, quadrature, Clement
  interpolation.
- ``varpx.projection``: divergence-preserving projection, inf-sup
  estimation.
- ``varpx.solver``: damped Newton with continuation for the discrete
  saddle-point problem.
- ``varpx.norms``: modulars, Luxemburg norms, quasi-norm errors, EOC.
- ``varpx.harness`` / ``varpx.cli``: config-driven experiment runner.

Submodules are imported lazily so the CLI can pin BLAS thread pools
before numpy loads.
"""

import importlib

__all__ = [
    "exponent",
    "femspace",
    "harness",
    "manufactured",
    "mesh",
    "norms",
    "orlicz",
    "projection",
    "quadrature",
    "solver",
]

__version__ = "0.1.0"


def __getattr__(name):
    if name in __all__:
        return importlib.import_module(f"varpx.{name}")
    raise AttributeError(f"module 'varpx' has no attribute {name!r}")
