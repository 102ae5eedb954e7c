"""phaselab: verification and construction toolkit for reproducing phases,
their diagonal geometry, exact Gaussian projector kernels, grid quadrature
operators, and linear complex symplectic normal forms."""

from . import critical, gauss_calc, geometry, operator_num, phase_core, symplin
from ._poly import Poly
from .errors import (BranchError, ConvergenceError, DomainError, PhaseLabError,
                     SolverError, SpecFormatError, TransversalityError)

__version__ = "0.1.0"

__all__ = [
    "Poly", "critical", "gauss_calc", "geometry", "operator_num", "phase_core",
    "symplin", "PhaseLabError", "DomainError", "BranchError", "ConvergenceError",
    "SolverError", "TransversalityError", "SpecFormatError",
]
