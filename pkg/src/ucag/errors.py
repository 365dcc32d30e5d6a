"""Exception types shared across the package."""


class UcagError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(UcagError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class FormatError(UcagError):
    """A file is malformed (bad magic, bad header, truncated payload)."""


class CorruptModelError(UcagError):
    """A weight file failed structural or checksum validation."""


class UnsupportedVersionError(CorruptModelError):
    """A weight file declares a format version this code does not read."""


class UndefinedDensityError(UcagError):
    """A map-density normalizer is zero, so the density is undefined."""
