"""Exception hierarchy shared by every module."""


class CMIBoundError(Exception):
    """Base class for all package errors."""


class ParameterError(CMIBoundError, ValueError):
    """A parameter lies outside its admissible range."""


class ShapeError(CMIBoundError, ValueError):
    """Array shapes or lengths are incompatible."""


class UnsupportedError(CMIBoundError):
    """The requested operation is not defined for this input kind."""


class CapacityError(CMIBoundError, ValueError):
    """The request exceeds a hard computational limit (e.g. enumeration size)."""


class UsageError(CMIBoundError):
    """An object was used in an inconsistent way (e.g. mismatched projection)."""


class NumericalError(CMIBoundError, ArithmeticError):
    """A numerical routine failed to converge or an online check failed."""


class CouplingError(NumericalError):
    """The pathwise coupling inequality between two trajectories was violated."""


class ConfigError(CMIBoundError, ValueError):
    """An experiment configuration is malformed."""


class ReportError(CMIBoundError):
    """A report file is corrupt or unreadable."""
