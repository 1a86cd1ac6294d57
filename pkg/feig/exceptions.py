# feig/exceptions.py


class FeigError(ValueError):
    """Base class for feature-image generation errors."""


class AntennaIndexError(FeigError):
    pass


class EmptyInputError(FeigError):
    pass


class InsufficientHistoryError(FeigError):
    pass


class CalibrationError(FeigError):
    pass


class DegenerateDenominatorError(FeigError):
    def __init__(self, message: str, subcarrier: int):
        super().__init__(message)
        self.subcarrier = subcarrier


class ImageShapeError(FeigError):
    pass
