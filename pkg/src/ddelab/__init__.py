"""Numerical laboratory for x'(t) = -x(t) + zeta*f(x(t - h))."""

from . import dde_solver, fundamental_solution, quasipoly, scalar_maps, stability_regions
from .errors import ConfigInvalid, DDELabError, DomainError

__all__ = ["scalar_maps", "stability_regions", "quasipoly", "fundamental_solution",
           "dde_solver", "DDELabError", "DomainError", "ConfigInvalid"]
__version__ = "0.1.0"
