"""Exception hierarchy shared by all modules."""


class EquivMDError(Exception):
    """Base class for every error raised by the package."""


class NotSpdError(EquivMDError, ValueError):
    """A matrix that must be symmetric positive-definite is not.

    In practice this almost always means a degenerate sample covariance,
    e.g. fewer distinct observations than variables.
    """


class DimensionMismatchError(EquivMDError, ValueError):
    pass


class DomainError(EquivMDError, ValueError):
    pass


class ConvergenceFailure(EquivMDError, ArithmeticError):
    pass


class UnequalSampleSizesError(EquivMDError, ValueError):
    pass


class WeightError(EquivMDError, ValueError):
    pass


class EmptyInputError(EquivMDError, ValueError):
    pass


class BcaSingularity(EquivMDError, ArithmeticError):
    """Denominator of the BCa level adjustment vanished."""


class AbcNumericalFailure(EquivMDError, ArithmeticError):
    """A perturbed statistic evaluation inside ABC hit a singular covariance."""


class UnknownScenarioError(EquivMDError, KeyError):
    pass


class UnknownMethodError(EquivMDError, KeyError):
    pass


class IncompleteGridError(EquivMDError, ValueError):
    pass
