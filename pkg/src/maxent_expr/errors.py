"""Exception and warning types shared across the package."""


class MaxEntError(Exception):
    """Base class for all package errors."""


class ValidationError(MaxEntError, ValueError):
    """Input data or parameters violate a documented invariant."""


class ParameterError(ValidationError):
    """Model parameters are invalid (e.g. a continuous self-coefficient below the floor)."""


class FormatError(ValidationError):
    """A file could not be parsed or has an unsupported version."""


class NumericalError(MaxEntError, ArithmeticError):
    """A numerical procedure diverged or produced non-finite values."""


class QuantizationWarning(UserWarning):
    """A score onset lies far from the metrical grid."""


class ShortTuneWarning(UserWarning):
    """A tune is too short to yield any training window."""


class FloorWarning(UserWarning):
    """A continuous self-coefficient was clipped at its positivity floor."""
