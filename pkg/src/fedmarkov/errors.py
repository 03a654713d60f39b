"""Exception types shared across the package.

Every error raised by fedmarkov derives from FedMarkovError so callers can
catch the whole family; parameter/shape errors additionally derive from
ValueError to behave like ordinary Python misuse errors.
"""


class FedMarkovError(Exception):
    """Base class for all fedmarkov errors."""


class InvalidParameterError(FedMarkovError, ValueError):
    """A scalar or structural argument is outside its legal range."""


class ShapeError(FedMarkovError, ValueError):
    """Array dimensions do not match."""


class DegenerateChainError(FedMarkovError):
    """The chain does not have a unique stationary distribution."""


class NotMixedError(FedMarkovError):
    """Mixing-time search exceeded the configured step cap."""


class UnsupportedChainError(FedMarkovError):
    """The chain violates a structural requirement (e.g. a zero stationary mass)."""


class ViolatedAssumptionError(FedMarkovError):
    """Absolute continuity of the transition kernel w.r.t. pi is violated."""


class NumericalError(FedMarkovError):
    """An underlying numerical routine failed to converge."""


class PreconditionError(FedMarkovError):
    """A step-size cap or other validity precondition of a bound is violated."""


class DivergenceError(FedMarkovError):
    """An optimization run produced non-finite or exploding iterates."""

    def __init__(self, message: str, round_index: int):
        super().__init__(message)
        self.round_index = round_index


class SchemaError(FedMarkovError):
    """A CSV file does not match the expected column schema."""


class OrderingError(FedMarkovError):
    """Timestamps are duplicated, non-monotone, or not hourly spaced."""


class ConstantColumnError(FedMarkovError):
    """A column has zero variance over the training period."""

    def __init__(self, column: str):
        super().__init__(f"column {column!r} is constant over the training period")
        self.column = column


class UndefinedAutocorrelationError(FedMarkovError):
    """Autocorrelation of a constant series is undefined."""


class MergeError(FedMarkovError):
    """Trajectory files with inconsistent schemas cannot be merged."""


class ConfigError(FedMarkovError):
    """An experiment configuration failed validation."""
