"""Exception types shared across the package."""


class PhaseLabError(Exception):
    """Base class for all package errors."""


class DomainError(PhaseLabError):
    """Arguments outside the declared domain box / complexification radius."""


class BranchError(PhaseLabError):
    """A square-root or log branch could not be tracked continuously."""


class ConvergenceError(PhaseLabError):
    """A Gaussian integral does not converge absolutely."""


class SolverError(PhaseLabError):
    """Newton iteration failed (singular Jacobian or no convergence)."""


class TransversalityError(PhaseLabError):
    """Subspaces fail a required transverse-intersection condition."""


class SpecFormatError(PhaseLabError):
    """A JSON spec file is malformed; the message names the offending field."""
