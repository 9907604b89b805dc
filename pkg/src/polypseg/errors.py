"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or array dimensions do not satisfy an operation's contract."""


class DomainError(ValueError):
    """A value lies outside the domain an operation accepts."""


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class LoadError(OSError):
    """A dataset or checkpoint on disk could not be read."""


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")
