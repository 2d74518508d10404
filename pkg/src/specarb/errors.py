"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or type invariant."""


class WarmupError(ValidationError):
    """Not enough history to compute a feature or start an episode."""


class StateError(RuntimeError):
    """Operation is not allowed in the object's current state."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""
