"""Package-level exception types."""


class InfeasibleError(RuntimeError):
    """Raised when no parameter choice can meet the requested guarantee."""
