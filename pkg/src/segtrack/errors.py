"""Exception types shared across the tracker."""


class SegTrackError(Exception):
    """Base class for all library errors."""


class NoForeground(SegTrackError):
    """Raised when a mask has no pixel above the box-fitting threshold."""


class PeakOutOfBounds(SegTrackError):
    """Raised when a location peak lies outside the channel grid."""


class DegenerateRegion(SegTrackError):
    """Raised when a requested crop region has non-positive side length."""


class BadResolution(SegTrackError):
    """Raised when an input resolution is not divisible by the encoder stride."""


class EmptyForeground(SegTrackError):
    """Raised when a prototype model is built from an empty foreground set."""


class EmptyBackground(SegTrackError):
    """Raised when a prototype model is built from an empty background set."""


class ShapeMismatch(SegTrackError):
    """Raised when spatial shapes of paired inputs disagree."""


class ChannelMismatch(SegTrackError):
    """Raised when channel counts of paired inputs disagree."""


class NonFiniteLoss(SegTrackError):
    """Raised when a training loss turns NaN or infinite."""


class NonPositiveScale(SegTrackError):
    """Raised when a decoded target size is not strictly positive."""


class EmptyTarget(SegTrackError):
    """Raised when tracker initialisation gets an empty target box."""


class UnknownConfigKey(SegTrackError):
    """Raised when a config file contains a key no module defines."""


class DatasetLayoutError(SegTrackError):
    """Raised when an on-disk sequence is missing frames or ground truth."""
