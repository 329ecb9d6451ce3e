"""
Errors raised by the decoding pipeline.

Every module raises a subclass of PsynetError so that the management commands
can turn any pipeline failure into a CommandError with one except clause.
"""


class PsynetError(Exception):
    """Base class for pipeline errors."""


class DimensionError(PsynetError, ValueError):
    """Array shapes do not agree with what an operation needs."""


class ParameterError(PsynetError, ValueError):
    """A numeric parameter is outside its admissible range."""


class RangeError(ParameterError):
    """A time window or index range falls outside the data."""


class ConfigurationError(PsynetError, ValueError):
    """A combination of settings cannot run (e.g. batch norm on one trial)."""


class DomainError(PsynetError, ValueError):
    """An input lies outside the domain of an elementwise function."""


class SingularityError(DomainError):
    """Evaluation at a point where the expression is singular."""


class DegenerateSignalError(PsynetError, ValueError):
    """A signal carries no information (e.g. all zeros)."""


class LabelError(PsynetError, IndexError):
    """A class label is outside [0, n_classes)."""


class ContractError(PsynetError, RuntimeError):
    """A caller broke an ordering or compatibility contract."""


class FormatError(PsynetError, ValueError):
    """A container file is malformed; `offset` is the byte where it broke."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class DivergenceError(PsynetError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
