"""Exception hierarchy.

Configuration/input problems derive from ``ValueError``; numerical failures
derive from :class:`NumericalError`. The CLI maps the former to exit code 2
and the latter to exit code 3.
"""


class NumericalError(RuntimeError):
    """A computation could not produce a trustworthy result."""


class GridError(ValueError):
    """Invalid grid description."""


class DisconnectedGridError(GridError):
    pass


class PowerFlowError(NumericalError):
    """Power flow did not converge or the network matrix is singular."""


class DegenerateDecompositionError(NumericalError):
    """An eigenvector is quasi-null (v^T v ~ 0); no complex-orthogonal basis."""


class BoundDomainError(ValueError):
    """A bound was requested outside the domain where its formula holds."""


class NoNullSpaceError(NumericalError):
    """No stealthy perturbation exists for the requested compromised set."""


class StaleCacheError(RuntimeError):
    """Backward called with a cache produced before the last parameter update."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss or activation."""
