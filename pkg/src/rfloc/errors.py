"""Exception types shared across the package."""


class RflocError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RflocError):
    """An argument or domain object violates a documented invariant."""


class DataFileError(RflocError):
    """A dataset, manifest, or model file is missing, malformed, or inconsistent."""
