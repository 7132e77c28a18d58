"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, everything else -> 1.
"""


class SegcapError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SegcapError):
    """Tensor extents do not line up for the requested operation."""


class ContractError(SegcapError):
    """An API precondition was violated by the caller."""


class DegenerateBatchError(SegcapError):
    """A loss was requested over a batch with nothing to score."""


class DataError(SegcapError):
    """An input file or record is malformed."""


class ConfigError(SegcapError):
    """A run configuration is invalid or contains unknown keys."""


class CheckpointError(SegcapError):
    """A checkpoint file is unreadable or inconsistent."""
