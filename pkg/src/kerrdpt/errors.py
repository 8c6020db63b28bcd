"""Exception hierarchy."""


class KerrError(Exception):
    """Base class for all errors raised by kerrdpt."""


class ConvergenceError(KerrError):
    """An iterative solver, integrator or fit did not converge."""


class CutoffError(KerrError):
    """The Fock truncation is too small for the requested parameters."""


class DegenerateSteadyStateError(KerrError):
    """The Liouvillian null space is not one-dimensional."""


class InsufficientDataError(KerrError):
    """Too few photons (or points) for the requested estimate."""


class StreamFormatError(KerrError):
    """A photon-tag file is malformed."""


class UndefinedCorrelationError(KerrError, ZeroDivisionError):
    """A normalized correlation was requested for an empty mode."""
