"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A caller-supplied parameter is out of its documented range."""


class ShapeError(ValueError):
    """Tensor or array extents are incompatible with an operation."""


class FormatError(ValueError):
    """A serialized dataset or checkpoint could not be decoded."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NoTraceError(RuntimeError):
    """backward() was asked to differentiate something that was never recorded."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
