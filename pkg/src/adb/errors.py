"""Exception hierarchy shared by every adb module."""


class ADBError(Exception):
    """Base class for all errors raised by this package."""


class InputError(ADBError, ValueError):
    """Invalid argument: wrong shape, non-finite value, bad parameter."""


class ParseError(InputError):
    """A dataset or config file could not be parsed.

    ``location`` carries a line number (csv/config) or byte offset (binary).
    """

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)
        self.location = location


class SizeError(InputError):
    """Instance too large for an exact solver."""


class ConvergenceError(ADBError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StepError(ADBError, RuntimeError):
    """A transport failure inside a trajectory, tagged with its 1-based step."""

    def __init__(self, message, step, permutation_id=None):
        super().__init__(message)
        self.step = step
        self.permutation_id = permutation_id


class ScoringError(ADBError, RuntimeError):
    """One or more permutations of a scoring run failed."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = list(failures)


class DomainError(ADBError, ValueError):
    """A closed-form expression was evaluated outside its domain."""


class EstimationError(ADBError, RuntimeError):
    """A Monte Carlo estimate is undefined (e.g. zero sample variance)."""


class DegenerateVarianceError(EstimationError):
    """A test statistic cannot be formed because a variance is zero."""


class CalibrationError(ADBError, RuntimeError):
    """A synthetic dataset could not be tuned to its requested shift."""


class TrainingDivergenceError(ADBError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch, step):
        super().__init__(f"{message} (epoch {epoch}, step {step})")
        self.epoch = epoch
        self.step = step


class SelectionError(ADBError, RuntimeError):
    """No candidate is available for model selection."""
