"""Exception hierarchy shared by all dmmlab modules."""


class DmmLabError(Exception):
    """Base class for every error raised by this package."""


class DimacsSyntaxError(DmmLabError, ValueError):
    pass


class NotThreeSat(DmmLabError, ValueError):
    pass


class IndexOutOfRange(DmmLabError, ValueError):
    pass


class InvalidRatio(DmmLabError, ValueError):
    pass


class InvalidWeights(DmmLabError, ValueError):
    pass


class LengthMismatch(DmmLabError, ValueError):
    pass


class VariableNotInClause(DmmLabError, ValueError):
    pass


class StateOutOfBounds(DmmLabError, ValueError):
    pass


class NonFiniteState(DmmLabError, FloatingPointError):
    pass


class ConfigError(DmmLabError, ValueError):
    pass


class ParseError(DmmLabError, ValueError):
    pass


class NonPositiveTime(DmmLabError, ValueError):
    pass


class DomainError(DmmLabError, ValueError):
    pass


class DegenerateSample(DmmLabError, ValueError):
    pass


class NonConvergence(DmmLabError, RuntimeError):
    pass


class EmptySample(DmmLabError, ValueError):
    pass


class UnknownPreset(DmmLabError, KeyError):
    pass
