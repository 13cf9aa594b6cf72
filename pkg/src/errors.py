"""Exception hierarchy shared by every module."""


class LbpError(Exception):
    """Base class for all library errors."""


class ShapeError(LbpError, ValueError):
    """Operand shapes do not compose."""


class TensorFormatError(LbpError, ValueError):
    """An LBPW tensor file is malformed."""


class SelectionError(LbpError, ValueError):
    """A base selection request cannot be satisfied."""


class ConfigError(LbpError, ValueError):
    """A training or sweep configuration is invalid."""


class DivergenceError(LbpError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, step, loss):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}, step {step} (loss={loss})"
        )
