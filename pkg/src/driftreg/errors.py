"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration errors -> 2, I/O -> 3,
dimension/format errors -> 4, numeric failures -> 5.
"""


class DriftRegError(Exception):
    """Base class for all package errors."""


class ConfigError(DriftRegError):
    """Invalid configuration value or combination."""


class UnknownShape(ConfigError):
    """Requested base shape name is not built in."""


class LevelOutOfRange(ConfigError):
    """Noise level outside its legal range."""


class DimMismatch(DriftRegError):
    """Point sets (or tensors) with incompatible dimensionality."""


class FormatError(DriftRegError):
    """Malformed point-set file, manifest, or checkpoint."""


class UnsupportedVersion(FormatError):
    """Checkpoint or manifest written by an unknown format version."""


class CorruptCheckpoint(FormatError):
    """Checkpoint failed its integrity check."""


class DegenerateShape(DriftRegError):
    """All points coincide; normalization scale is zero."""


class EmptyReference(DriftRegError):
    """Nearest-neighbor query against an empty reference set."""


class EmptySet(DriftRegError):
    """Loss evaluated on an empty point set."""


class IndexOutOfRange(DriftRegError):
    """Point index outside [0, n)."""


class KTooLarge(DriftRegError):
    """Neighbor count k outside [1, n]."""


class TooFewPointsLeft(DriftRegError):
    """Removal noise would leave fewer than the minimum point count."""


class NonPositiveClip(DriftRegError):
    """Clipped loss threshold must be > 0."""


class ShapeMismatch(DriftRegError):
    """Tensor shapes do not conform for the requested operation."""


class BatchTooSmall(DriftRegError):
    """Batch normalization in train mode needs at least two rows."""


class TapeConsumed(DriftRegError):
    """backward() called a second time on an already-used graph."""


class NonScalarLoss(DriftRegError):
    """backward() requires a 1x1 tensor."""


class NumericError(DriftRegError):
    """Base class for numeric failures."""


class SingularSystem(NumericError):
    """Degenerate control-point configuration in a spline fit."""


class SingularSolve(NumericError):
    """Near-singular linear system in the iterative registration solver."""


class NonFinite(NumericError):
    """NaN or infinity encountered where a finite value is required."""


class NonFiniteLoss(NumericError):
    """Training loss became NaN or infinite; run aborted."""
