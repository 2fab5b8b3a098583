"""Exception types shared across the package."""


class AvfuseError(Exception):
    """Base class for all errors raised by avfuse."""


class DimensionError(AvfuseError):
    """Array shapes are inconsistent with an operation's contract."""


class ContractError(AvfuseError):
    """Components disagree on a declared interface (e.g. embedding tap)."""


class ValidationError(AvfuseError):
    """Input data violates a documented precondition."""


class ConfigError(AvfuseError):
    """A configuration value is out of its legal range."""


class NotFoundError(AvfuseError):
    """A requested resource (cache key, file, checkpoint) is missing."""


class FormatError(AvfuseError):
    """A file exists but its on-disk format is invalid or unsupported."""


class FreezeViolationError(AvfuseError):
    """A parameter that was declared frozen changed during training."""
