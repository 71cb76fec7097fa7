"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2), model
validation problems (3) and experiment-level failures (1).
"""


class HmmLimitsError(ValueError):
    """Base class for all package errors."""


class ConfigError(HmmLimitsError):
    exit_code = 2


class ParseError(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class ModelError(HmmLimitsError):
    exit_code = 3


class NonStochastic(ModelError):
    pass


class NegativeEntry(ModelError):
    pass


class NotPrimitive(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class ZeroChannelEntry(ModelError):
    pass


class SymbolOutOfRange(ModelError):
    pass


class ParamOutOfRange(ModelError):
    pass


class ExperimentError(HmmLimitsError):
    exit_code = 1


class DegenerateVariance(ExperimentError):
    pass


class NegativeVarianceEstimate(ExperimentError):
    pass


class HessianDegenerate(ExperimentError):
    pass


class BadExponents(ConfigError):
    pass


class TooShort(ConfigError):
    pass


class CylinderTooLong(ConfigError):
    pass
