"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the command line can map failures
to a stable non-zero status per category.
"""


class FeelsimError(Exception):
    exit_code = 1


class ConfigError(FeelsimError, ValueError):
    exit_code = 2


class InvalidRatioError(FeelsimError, ValueError):
    exit_code = 2


class EmptyGradientError(FeelsimError, ValueError):
    exit_code = 4


class DimensionMismatchError(FeelsimError, ValueError):
    exit_code = 4


class InfeasibleDeadlineError(FeelsimError, ValueError):
    """Deadline does not leave a device any time to upload."""

    exit_code = 3


class InfeasiblePlanError(FeelsimError, ValueError):
    exit_code = 3


class NumericError(FeelsimError, ArithmeticError):
    exit_code = 4


class DomainError(FeelsimError, ValueError):
    exit_code = 4


class DeadlineCapWarning(UserWarning):
    """The optimal deadline sits on the upper bracket edge."""
