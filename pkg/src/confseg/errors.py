"""Exception types shared across the package."""


class ConfsegError(Exception):
    """Base class for all confseg errors."""


class FormatError(ConfsegError):
    """A file's structure (magic bytes, header, payload length) is invalid."""


class DataError(ConfsegError):
    """Payload values violate an invariant (NaN, non-finite, non-binary)."""


class ShapeError(ConfsegError):
    """Grid dimensions of related inputs disagree."""


class EmptyInputError(ConfsegError):
    """An operation that needs at least one element received none."""


class ConfigError(ConfsegError):
    """A configuration document or argument combination is invalid."""
