"""Exception types shared across the pipeline."""


class RaliflowError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(RaliflowError):
    pass


class IndexOutOfRange(RaliflowError):
    pass


class NotScalar(RaliflowError):
    pass


class NonFinite(RaliflowError):
    pass


class DegeneratePoint(RaliflowError):
    pass


class TrackMismatch(RaliflowError):
    pass


class DuplicateTrackId(RaliflowError):
    pass


class EmptyCloud(RaliflowError):
    pass


class FrameMismatch(RaliflowError):
    pass


class LengthMismatch(RaliflowError):
    pass


class GridMismatch(RaliflowError):
    pass


class ConfigInvalid(RaliflowError):
    pass
