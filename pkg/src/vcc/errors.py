"""Exception types shared across the package."""


class VCCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(VCCError):
    """An argument violates a documented precondition (shape, emptiness, range)."""


class LayerIndexError(VCCError):
    """A layer index is out of range or mis-ordered."""


class UnsupportedLayerError(VCCError):
    """An operation met a layer kind it cannot handle."""


class TrainingFailure(VCCError):
    """The trainer did not reach the required accuracy within its step budget."""


class UndefinedMetricError(VCCError):
    """A metric was requested on an empty or degenerate collection."""


class ZeroMarginError(VCCError):
    """CAV training received indistinguishable positive and negative sets."""


class InsufficientRandomsError(VCCError):
    """The random pool cannot supply the requested number of disjoint sets."""


class NoPathError(VCCError):
    """A concept has no path to the class node."""


class InsufficientDataError(VCCError):
    """Too few points to compute a statistic."""


class InvalidConceptError(VCCError):
    """A concept centroid is degenerate (e.g. the zero vector)."""


class BridgeError(VCCError):
    """The external model bridge misbehaved (protocol or process failure)."""
