# evaluation/exceptions.py


class MetricsError(ValueError):
    """Base class for evaluation errors."""


class LengthMismatchError(MetricsError):
    pass


class LabelRangeError(MetricsError):
    pass
