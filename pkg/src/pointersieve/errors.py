"""Exception hierarchy shared by all modules."""


class PointerSieveError(Exception):
    """Base class for every error raised by this package."""


class InvalidStateError(PointerSieveError, ValueError):
    """A matrix or vector violates the density-matrix / Bloch-ball invariants."""


class DimensionError(PointerSieveError, ValueError):
    pass


class TruncationError(PointerSieveError, ValueError):
    """The Fock truncation is too small for the requested state.

    ``required_dim`` holds the smallest truncation that would be accepted.
    """

    def __init__(self, message, required_dim=None):
        super().__init__(message)
        self.required_dim = required_dim


class ParameterError(PointerSieveError, ValueError):
    pass


class StepSizeError(ParameterError):
    pass


class ModelError(PointerSieveError):
    """The dynamics produced a value that signals a broken state."""


class DomainError(PointerSieveError, ValueError):
    pass


class ReductionError(PointerSieveError, ValueError):
    """Projection onto the two-coherent-state subspace lost too much weight."""


class NumericError(PointerSieveError, ArithmeticError):
    """NaN, loss of positivity or a failed quadrature."""


class ConfigError(PointerSieveError, ValueError):
    pass
