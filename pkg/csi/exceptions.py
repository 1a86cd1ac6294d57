# csi/exceptions.py


class CsiError(ValueError):
    """Base class for every CSI data-model, simulator and dump error."""


class NonFinitePathError(CsiError):
    pass


class InvalidScenarioError(CsiError):
    pass


class EmptySeriesError(CsiError):
    pass


class DumpFormatError(CsiError):
    """Raised when a CSI dump file cannot be decoded."""


class DumpMagicError(DumpFormatError):
    pass


class DumpTruncatedError(DumpFormatError):
    pass


class DumpDimensionError(DumpFormatError):
    pass
