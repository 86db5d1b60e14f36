class InputError(ValueError):
    """Raised when operation inputs violate their documented domain."""


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given inputs (e.g. single-class AUC)."""
