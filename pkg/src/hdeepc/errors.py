"""Exception types shared across the toolkit."""


class HdeepcError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(HdeepcError, ValueError):
    pass


class NonConvex(HdeepcError, ValueError):
    """Raised when a QP hessian is indefinite beyond the PSD probe shift."""


class LengthTooShort(HdeepcError, ValueError):
    pass


# Hankel construction uses a separate name for the same condition.
TooShort = LengthTooShort


class ExcitationFailed(HdeepcError, RuntimeError):
    pass


class IndexOutOfRange(HdeepcError, IndexError):
    pass


class InfeasibleTransform(HdeepcError, ValueError):
    """No transform pair satisfies the coupling equations.

    ``residual`` holds the residual of the best least-squares candidate.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class MissingTransform(HdeepcError, ValueError):
    pass


class BoxesUnsupported(HdeepcError, ValueError):
    pass


class ConfigInvalid(HdeepcError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class SolverAbort(HdeepcError, RuntimeError):
    pass
