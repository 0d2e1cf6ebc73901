"""Exception hierarchy shared across the package."""


class AputError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AputError, ValueError):
    """Invalid sizes, parameters or configuration keys."""


class IngestionError(AputError, ValueError):
    """A CSV row could not be turned into a labeled reading."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ZeroLikelihoodError(AputError, ArithmeticError):
    """Observation has zero probability under the current belief and model."""


class UsageError(AputError, RuntimeError):
    """API used out of order, e.g. stepping a finished episode."""


class SizeError(AputError, ValueError):
    """An exact solver or enumerator was asked for a problem too large to handle."""


class ConvergenceError(AputError, ArithmeticError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (final residual {residual:.3e})")


class TrainingDivergedError(AputError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
