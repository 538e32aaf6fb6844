"""Exception types shared across the package."""


class P2MError(Exception):
    """Base class for all p2msim errors."""


class MalformedFileError(P2MError):
    """A binary or text input does not follow its declared layout."""


class BadMagicError(MalformedFileError):
    """File magic bytes do not match the expected format."""


class TruncatedFileError(MalformedFileError):
    """File ends before the declared record count is reached."""


class UnsortedEventsError(MalformedFileError):
    """Event timestamps regress where the format requires sorted order."""


class GeometryError(P2MError):
    """An event or shape falls outside the declared sensor geometry."""


class InvalidParameterError(P2MError, ValueError):
    """A parameter violates its documented domain."""


class ContractViolationError(P2MError):
    """Caller passed data that violates an operation's precondition."""


class ShapeMismatchError(P2MError):
    """Array shapes are inconsistent with each other or with a spec."""


class DegenerateFitError(P2MError):
    """Least-squares design matrix is rank deficient (e.g. constant inputs)."""


class BandwidthUndefinedError(P2MError):
    """Bandwidth requested for a run with zero input events."""


class ConfigError(P2MError):
    """Experiment config file contains unknown keys or unparsable values."""
