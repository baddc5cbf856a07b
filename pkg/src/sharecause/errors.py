"""Exception types. The CLI maps validation errors to exit 1, the rest to 2."""


class ValidationError(ValueError):
    """Bad input, configuration, or file contents."""


class NumericalError(RuntimeError):
    """Non-finite values or divergence during a computation."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
