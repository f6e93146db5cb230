"""Exception types raised across the package."""


class GdemScaleError(Exception):
    """Base class for all package errors."""


# geodesy
class UnsupportedLatitude(GdemScaleError, ValueError):
    pass


class SyncPointNotFound(GdemScaleError):
    pass


# gdem
class DegenerateTerrain(GdemScaleError, ValueError):
    pass


class FormatError(GdemScaleError, ValueError):
    """Malformed file. ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyDensificationWarning(UserWarning):
    """Densification would yield no points; raw points are returned instead."""


# projection
class EmptyProjection(GdemScaleError):
    pass


class NoGroundAnchors(GdemScaleError):
    pass


# groundseg
class RoughScaleDiverged(GdemScaleError):
    pass


class CfUndefined(GdemScaleError):
    pass


class InvalidCloud(GdemScaleError, ValueError):
    pass


class CsfFailed(GdemScaleError):
    pass


# scaling
class DegenerateDisparity(GdemScaleError, ValueError):
    pass


class InsufficientAnchors(GdemScaleError):
    pass


class DegenerateSystem(GdemScaleError):
    pass


class NonPositiveScale(GdemScaleError):
    """The fitted scale is not positive. The fitted values are kept on the exception."""

    def __init__(self, message: str, s: float = float("nan"), t: float = float("nan")):
        super().__init__(message)
        self.s = s
        self.t = t


class NoOverlap(GdemScaleError):
    pass


class HorizonOnly(GdemScaleError):
    pass


# eval
class EmptyEvaluation(GdemScaleError):
    pass


# cli
class ConfigError(GdemScaleError):
    pass
