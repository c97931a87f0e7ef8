"""Exception hierarchy shared across the package."""


class InvGameError(Exception):
    """Base class for all errors raised by invgame."""


class DimensionError(InvGameError, ValueError):
    """Array shapes do not match the game or feature map."""


class DomainError(InvGameError, ValueError):
    """A state lies outside the (inflated) domain box of a feature map."""


class NumericalError(InvGameError, ArithmeticError):
    """Base class for failures of a numerical routine."""


class ConvergenceError(NumericalError):
    """An iterative solver did not reach its tolerance.

    Attributes
    ----------
    residual : float
        Last residual (or weight change) observed.
    trace : list of float
        Residual history, one entry per iteration.
    """

    def __init__(self, message, residual=float("nan"), trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace or [])


class StabilizationError(NumericalError):
    """A closed-loop matrix produced during iteration is not Hurwitz."""


class ConditioningError(NumericalError):
    """A linear system is too ill-conditioned to solve reliably."""


class DivergenceError(NumericalError):
    """A simulated trajectory left the admissible state norm."""


class InfeasibleError(InvGameError, ValueError):
    """No violation level below one satisfies the scenario bound."""


class EnsembleError(NumericalError):
    """Too many Monte Carlo rollouts diverged."""


class PriorConstructionError(NumericalError):
    """Too many Monte Carlo prior draws failed to solve."""


class ConfigError(InvGameError, ValueError):
    """An experiment configuration is malformed.

    Attributes
    ----------
    field : str
        Dotted path of the offending config entry.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
