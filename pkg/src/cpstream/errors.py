"""Exception types raised across the package."""


class CPStreamError(Exception):
    """Base class for every error raised by cpstream."""


class PointBehindCamera(CPStreamError, ValueError):
    pass


class NonPositiveDepth(CPStreamError, ValueError):
    pass


class PixelOutOfBounds(CPStreamError, ValueError):
    pass


class DegenerateRay(CPStreamError, ValueError):
    pass


class BadMagic(CPStreamError, ValueError):
    pass


class TruncatedFile(CPStreamError, ValueError):
    pass


class MissingMask(CPStreamError, KeyError):
    def __init__(self, view):
        super().__init__(f"no mask for view {view}")
        self.view = view

    def __str__(self):
        return self.args[0]


class EmptyNeighborhood(CPStreamError, ValueError):
    pass


class RadiusExceedsFocal(CPStreamError, ValueError):
    pass


class TargetExceedsCount(CPStreamError, ValueError):
    pass


class NoNeighbors(CPStreamError, ValueError):
    pass


class NoControlPointsForCategory(CPStreamError, ValueError):
    def __init__(self, category):
        super().__init__(f"no control points for category {category}")
        self.category = category


class SizeMismatch(CPStreamError, ValueError):
    pass


class ResidualSizeMismatch(SizeMismatch):
    pass


class DimensionMismatch(CPStreamError, ValueError):
    pass


class CorruptManifest(CPStreamError, ValueError):
    pass


class MissingPayload(CPStreamError, FileNotFoundError):
    pass


class EmptyInput(CPStreamError, ValueError):
    pass


class MalformedInput(CPStreamError, ValueError):
    pass


class FrameError(CPStreamError):
    """Wraps a failure inside the streaming loop with the frame index."""

    def __init__(self, frame, cause):
        super().__init__(f"frame {frame}: {type(cause).__name__}: {cause}")
        self.frame = frame
        self.cause = cause
