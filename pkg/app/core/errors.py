class MatchingError(Exception):
    """Base class for every error raised by the toolkit."""


class UserInputError(MatchingError):
    """Bad input data, files or configuration (CLI exit code 1)."""


class GeometryError(MatchingError):
    """A numerical step could not produce a result for the given geometry."""


# --- Input errors ---
class MalformedScan(UserInputError):
    pass


class IoFailure(UserInputError):
    pass


class LabelLengthMismatch(UserInputError):
    pass


class DimensionMismatch(UserInputError):
    pass


class ZeroInitialError(UserInputError):
    pass


class MalformedFile(UserInputError):
    """Trajectory, intrinsics, PLY or LIMG/FLOW content that does not parse."""


class ConfigError(UserInputError):
    pass


# --- Geometry errors ---
class NonPositiveDepth(GeometryError):
    pass


class EmptyProjection(GeometryError):
    """No map point survives projection: the candidate pose does not see the map."""


class DegenerateConfiguration(GeometryError):
    pass


class TooFewPoints(GeometryError):
    pass


class NoConsensus(GeometryError):
    pass
