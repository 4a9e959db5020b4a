"""Exception types shared across the package.

Everything raised on bad inputs or bad files derives from KnowfuseError so
callers (and the CLI) can distinguish contract violations from genuine I/O
failures such as a missing path.
"""


class KnowfuseError(Exception):
    """Base class for all validation and format errors raised by knowfuse."""


class TripleLoadError(KnowfuseError):
    """A triples file could not be parsed (malformed row, empty file)."""


class CorruptionError(KnowfuseError):
    """Negative sampling could not find a filtered corruption in time."""


class StoreFormatError(KnowfuseError):
    """Base class for binary store and checkpoint format problems."""


class BadMagicError(StoreFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedStoreError(StoreFormatError):
    """File ended before the declared payload was complete."""


class DimMismatchError(StoreFormatError):
    """Declared dimensionality disagrees with what the caller expects."""


class DuplicateNameError(StoreFormatError):
    """Two rows in a store carry the same name."""


class NonFiniteError(StoreFormatError):
    """A stored vector contains NaN or infinity."""
