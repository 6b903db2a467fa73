"""Exception types raised by elpaf."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class OutOfRangeError(ValueError):
    """A query falls outside the domain covered by a model (e.g. a PSF stack)."""


class UnsupportedOperationError(TypeError):
    """The operation is not defined for this kind of model."""


class ConfigError(ValueError):
    """A scenario or bench configuration file is malformed."""
