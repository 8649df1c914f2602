"""Exception hierarchy shared by every module."""


class DptrnError(Exception):
    """Base class for all library errors."""


class ConfigurationError(DptrnError, ValueError):
    """Invalid or inconsistent configuration."""


class DimensionError(DptrnError, ValueError):
    """Array shapes do not line up."""

    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}")
        self.expected = tuple(expected)
        self.actual = tuple(actual)


class DataError(DptrnError, ValueError):
    """Malformed or insufficient input data."""


class StateError(DptrnError, RuntimeError):
    """Operation not allowed in the current train/eval mode."""


class NumericalError(DptrnError, ArithmeticError):
    """Non-finite values produced by a computation."""


class DivergenceError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
