# core/exceptions.py

"""
Exception hierarchy shared by the library modules and the management commands.

Management commands map these onto process exit codes:
ConfigurationError -> 1, DataError -> 2, NumericalError -> 3.
"""


class ActivePoseError(Exception):
    """Base class for every error raised by the core library."""

    exit_code = 1


class ConfigurationError(ActivePoseError):
    """A run config, scene file or option value is malformed or out of range."""

    exit_code = 1


class ContractViolationError(ActivePoseError, ValueError):
    """A caller broke a documented precondition (shape, symmetry, range)."""

    exit_code = 1


class DataError(ActivePoseError):
    """Input data cannot be used (unreadable file, empty measurements...)."""

    exit_code = 2


class InvalidMeasurementError(DataError):
    """A depth measurement violates its validity rules (e.g. z <= 0)."""


class EmptyMeasurementError(DataError):
    """No valid masked pixel survived, the object is invisible from this view."""


class MeshBuildError(DataError):
    """The mesh cannot be turned into a signed distance field."""

    def __init__(self, message, open_edges=()):
        super().__init__(message)
        self.open_edges = tuple(open_edges)


class NumericalError(ActivePoseError):
    """A numerical procedure failed in a way that cannot be reported as a flag."""

    exit_code = 3


class CalibrationError(NumericalError):
    """Photometric response recovery failed (rank deficiency, non-monotone result)."""


class FitError(NumericalError):
    """BSDF fitting produced a non-finite loss."""
