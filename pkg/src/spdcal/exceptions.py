"""Exception hierarchy shared by every spdcal module."""


class CalibrationError(ValueError):
    """Base class for all calibration errors."""


class OutOfRange(CalibrationError):
    """A forward map produced a probability outside [0, 1]."""


class NegativeDiscriminant(CalibrationError):
    """The measured click probability is inconsistent with the afterpulse probability."""


class InconsistentRates(CalibrationError):
    """Light-on / light-off rates cannot be produced by the stated detector."""


class ParameterOutOfRange(CalibrationError):
    """Model parameters give an invalid per-photon-number efficiency."""


class DegenerateDof(CalibrationError):
    """Number of points does not exceed the number of free parameters."""


class NoConvergence(CalibrationError, RuntimeError):
    """None of the optimizer starts converged."""


class EmptyInput(CalibrationError):
    """An input file has no data rows."""
