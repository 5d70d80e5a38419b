"""Exception types raised across the package."""


class DreidelError(Exception):
    """Base class for computation failures (CLI exit code 1)."""


class InconsistentSystemError(DreidelError):
    """Affine elimination produced a nonzero constant equation."""


class SingularSystemError(DreidelError):
    """A linear system had no usable pivot; absorption is not certain."""


class NoConvergenceError(DreidelError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class EmptyDomainError(DreidelError):
    """A state space or fit grid with no points was requested."""


class SimulationError(DreidelError):
    """A simulated trial exceeded the spin cap."""
