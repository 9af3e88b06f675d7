"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, e.g. a convolution shape chain that does not close."""


class ShapeError(ValueError):
    """Array shapes do not match what an operation expects."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class FormatError(ValueError):
    """A binary file could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TruncatedFileError(FormatError):
    """File ended before all the data promised by its header was read."""
