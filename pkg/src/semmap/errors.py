"""Exception types shared across the mapping pipeline."""


class SemMapError(Exception):
    """Base class for all errors raised by semmap."""


class InvalidDepth(SemMapError, ValueError):
    pass


class BehindCamera(SemMapError, ValueError):
    pass


class EmptyTrajectory(SemMapError, ValueError):
    pass


class EmptyCloud(SemMapError, ValueError):
    pass


class NoClusters(SemMapError, ValueError):
    pass


class DegenerateCloud(SemMapError, ValueError):
    pass


class InsufficientConsensus(SemMapError, RuntimeError):
    pass


class PoseOutsideGrid(SemMapError, ValueError):
    pass


class FootprintOutsideGrid(SemMapError, ValueError):
    pass


class GeometryMismatch(SemMapError, ValueError):
    pass


class MapFormatError(SemMapError, ValueError):
    """Malformed map file (bad magic, truncated payload, bad JSON)."""


class SchemaVersionError(SemMapError, ValueError):
    """A versioned file carries a schema this code does not understand."""


class NoPath(SemMapError, RuntimeError):
    pass


class StartOrGoalLethal(SemMapError, ValueError):
    pass


class ConfigError(SemMapError, ValueError):
    pass


class NonPositiveSize(UserWarning):
    """Kalman update produced a non-positive box size; it was clamped."""
