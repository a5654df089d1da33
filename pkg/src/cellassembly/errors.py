"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``GuardError`` -> 3.
"""


class DataError(ValueError):
    """Malformed, inconsistent or out-of-range input data."""


class DimensionError(DataError):
    """Array shapes do not agree with the model dimensions."""


class FormatError(DataError):
    """A serialized file has the wrong magic, version, kind or checksum."""


class GuardError(RuntimeError):
    """A numeric guard tripped (rejection cap exceeded, search too large)."""
