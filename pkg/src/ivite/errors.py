"""Exception hierarchy shared across the package."""


class IviteError(Exception):
    """Base class for all package-specific errors."""


class DataError(IviteError):
    """Invalid or malformed input data."""


class MissingColumnError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class UnknownCellError(DataError):
    pass


class EmptyArmError(DataError):
    """A required (d, z) or z arm has no observations."""


class EstimationError(IviteError):
    """Estimation cannot proceed on the given cell."""


class WeakInstrumentError(EstimationError):
    """Propensity gap below tolerance; Eq-style ratio is unreliable."""


class CellTooSmallError(EstimationError):
    """Cell below the configured minimum size thresholds."""
