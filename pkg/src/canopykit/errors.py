"""Exception types shared across the package.

Every error raised by library code derives from :class:`CanopyKitError` so
callers (and the CLI) can separate validation failures from genuine I/O
problems.
"""


class CanopyKitError(Exception):
    """Base class for all canopykit validation errors."""


# geometry
class DegeneratePolygon(CanopyKitError):
    """Polygon has fewer than 3 vertices or zero area."""


class OutsideRaster(CanopyKitError):
    """No pixel center of the raster falls inside the polygon."""


class EmptyMask(CanopyKitError):
    """Operation requires a mask with at least one true pixel."""


# raster
class EmptyInput(CanopyKitError):
    """Operation requires a non-empty value list."""


class InvalidP(CanopyKitError):
    """Percentile rank outside [0, 100]."""


class NoOverlap(CanopyKitError):
    """Mask window has no usable pixels inside the raster bounds."""


class AllNodata(CanopyKitError):
    """Every masked raster value is the nodata sentinel."""


class CenterOutOfBounds(CanopyKitError):
    """Tile center lies outside the raster."""


# extraction / config
class ConfigError(CanopyKitError):
    """Invalid configuration value or unknown config key."""


class EmptyCrownList(CanopyKitError):
    """Pipeline invoked with no crowns."""


# allometry
class InsufficientSamples(CanopyKitError):
    """A class has fewer samples than the fit requires."""


class NonPositiveValue(CanopyKitError):
    """Radius or height must be strictly positive for log-space fitting."""


class ZeroVariance(CanopyKitError):
    """All radii of a class are equal; the log-log slope is undefined."""


class UnknownClass(CanopyKitError):
    """Class name absent from the fitted parameters."""


class NonPositiveRadius(CanopyKitError):
    """Prediction requires radius > 0."""


# metrics
class LengthMismatch(CanopyKitError):
    """Prediction and truth sequences differ in length."""


class IndexOutOfRange(CanopyKitError):
    """Class index outside [0, C)."""


class DomainError(CanopyKitError):
    """Input outside the metric's mathematical domain."""


# losses
class NonFinite(CanopyKitError):
    """Loss input is NaN or infinite."""


class InvalidDistribution(CanopyKitError):
    """Probability vector does not sum to 1 or has entries outside (0, 1]."""


class ZeroCount(CanopyKitError):
    """Class-balanced weights require every class count >= 1."""


class InvalidBeta(CanopyKitError):
    """Class-balanced beta outside [0, 1)."""


class MissingHistory(CanopyKitError):
    """Loss history too short for the requested cross-epoch ratio."""


class NonPositiveLoss(CanopyKitError):
    """Loss ratios require strictly positive recorded losses."""


class DimensionMismatch(CanopyKitError):
    """Gradient vectors differ in dimension."""


class ZeroNormConflict(CanopyKitError):
    """Conflict projection against a zero-norm gradient."""


# heads
class ShapeMismatch(CanopyKitError):
    """Tensor shapes inconsistent with the head configuration."""


class InvalidHeads(CanopyKitError):
    """Embedding dimension not divisible by the attention head count."""


class InvalidDim(CanopyKitError):
    """Embedding dimension incompatible (positional encoding needs d % 4 == 0)."""


# synth
class SpecInvalid(CanopyKitError):
    """Scene specification violates its invariants."""
