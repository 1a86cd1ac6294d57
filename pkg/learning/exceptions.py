# learning/exceptions.py


class LearningError(ValueError):
    """Base class for model, loss and training errors."""


class ShapeMismatchError(LearningError):
    pass


class NonFiniteLossError(LearningError):
    pass


class NonFiniteGradientError(LearningError):
    pass


class DeadProjectionError(LearningError):
    """A projection head produced an all-zero vector before normalization."""


class MissingClassError(LearningError):
    pass


class MissingPairError(LearningError):
    pass


class PrerequisiteError(LearningError):
    """A later training stage was requested without the checkpoints it builds on."""


class CheckpointFormatError(LearningError):
    pass


class DatasetFormatError(LearningError):
    pass
