"""Exception hierarchy.

Every error raised by the package derives from :class:`VarqError` and belongs to
one of three families. The CLI maps the family to its exit code.
"""


class VarqError(Exception):
    exit_code = 3


class ConfigError(VarqError, ValueError):
    """Bad parameter or configuration value."""

    exit_code = 1


class DataError(VarqError, ValueError):
    """Malformed input data (distributions, CSV files, tensors)."""

    exit_code = 2


class NumericalError(VarqError, ArithmeticError):
    """A computation produced or received an unusable value."""

    exit_code = 3


# parameters
class AlphaOutOfRange(ConfigError):
    pass


class KappaOutOfRange(ConfigError):
    pass


class ParamOutOfRange(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class GammaZero(ConfigError):
    pass


class GammaOne(ConfigError):
    pass


class BetaOutOfRange(ConfigError):
    pass


class HorizonMismatch(ConfigError):
    pass


class IndexOutOfRange(ConfigError, IndexError):
    pass


# data
class EmptyDistribution(DataError):
    pass


class NegativeProbability(DataError):
    pass


class ProbabilitySumMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class BadHeader(DataError):
    pass


class NonNumericField(DataError):
    def __init__(self, row, message=""):
        self.row = row
        super().__init__(f"row {row}: {message}" if message else f"row {row}")


class DuplicateRewardConflict(DataError):
    pass


class RowProbabilityNegative(DataError):
    pass


class StochasticityViolation(DataError):
    def __init__(self, s, a, total):
        self.s, self.a, self.total = s, a, total
        super().__init__(f"transition probabilities of (s={s}, a={a}) sum to {total!r}")


class DanglingIndex(DataError):
    pass


class RewardBoundsError(DataError):
    pass


class IoError(DataError, OSError):
    pass


# numerics
class NonFiniteInput(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class MonotonicityViolation(NumericalError):
    pass


class BudgetExceeded(NumericalError):
    pass
