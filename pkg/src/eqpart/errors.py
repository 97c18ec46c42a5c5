"""Exceptions shared across the package."""


class EqpartError(Exception):
    """Base class for domain errors raised by this package."""


class ResolutionTooCoarseError(EqpartError):
    """The atom cloud is too coarse for the requested scale or target count."""


class SpaceNotConnectedError(EqpartError):
    """The working-scale overlap graph is disconnected, so the equal-measure
    construction cannot proceed."""


class ConstructionDegenerateError(EqpartError):
    """A built structure failed a sanity bound (e.g. a cell with no interior
    ball); usually means the scale ratio must be decreased."""
