"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(ToolkitError):
    """Invalid model, scheme or run-configuration parameters."""


class EvaluationError(ToolkitError):
    """A function produced a non-finite value.

    Carries the offending evaluation point in ``point`` when known.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DivergenceError(ToolkitError):
    """A simulated state exceeded the overflow bound.

    ``step`` is the first offending step index, ``trajectory`` the partial
    trajectory up to (and excluding) that step.
    """

    def __init__(self, message, step, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


class PreconditionError(ToolkitError):
    """A theorem precondition required by a check does not hold."""
