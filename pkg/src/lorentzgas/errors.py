"""Exception types raised by the simulator."""


class LorentzGasError(Exception):
    """Base class for all errors raised by this package."""


class OutOfBoundsError(LorentzGasError):
    """A query left the configured world ball."""


class InsideScattererError(LorentzGasError):
    """A ray started inside a scatterer (inconsistent state)."""


class GrazingError(LorentzGasError):
    """Reflection requested for a non-incoming direction."""


class DegenerateDirectionError(LorentzGasError):
    """A proposed velocity coincides with the current one."""


class RunawayError(LorentzGasError):
    """Event-count guard tripped."""


class ScheduleError(LorentzGasError):
    """Invalid or inadmissible scaling schedule."""
