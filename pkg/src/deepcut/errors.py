"""Exception taxonomy.

Every failure the library raises on purpose derives from DeepCutError so the
CLI can map domain errors to exit code 1 while argparse keeps exit code 2 for
usage errors.
"""


class DeepCutError(Exception):
    """Base class for all deliberate library errors."""


class FormatError(DeepCutError):
    """Malformed DCUT container: bad magic, truncation, bad metadata."""


class UnsupportedVersionError(FormatError):
    """DCUT container with a version this reader does not speak."""


class ArgumentError(DeepCutError, ValueError):
    """Caller violated a documented precondition."""


class DegenerateFeatureError(DeepCutError):
    """A feature row is all zeros where a nonzero vector is required."""


class DegenerateGraphError(DeepCutError):
    """Graph construction or propagation hit a node with no usable edges."""


class DegeneratePartitionError(DeepCutError):
    """A partition has a cluster with zero association mass."""


class NumericError(DeepCutError):
    """Non-finite values or solver failure in numeric code."""


class OptimizationError(NumericError):
    """Loss became non-finite during per-image optimization."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class ContractError(DeepCutError):
    """Internal API misuse, e.g. backward() fed an eval-mode cache."""


class NoObjectError(DeepCutError):
    """Localization found no foreground cells to box."""


class InsufficientForegroundError(DeepCutError):
    """Two-stage segmentation: foreground smaller than the requested k."""


class SizeError(DeepCutError, ValueError):
    """Exact enumeration requested on a graph above its size cap."""
