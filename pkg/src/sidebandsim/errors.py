"""Exception types raised across the package."""


class SidebandError(Exception):
    """Base class for all package errors."""


class ConfigError(SidebandError, ValueError):
    """Invalid parameter set or configuration file."""


class NoCooling(SidebandError):
    """Optomechanical damping absent or too weak for the approximated budget.

    ``gamma_opt`` and ``gamma_m`` are attached so callers can decide how to
    fall back.
    """

    def __init__(self, message, gamma_opt=None, gamma_m=None):
        super().__init__(message)
        self.gamma_opt = gamma_opt
        self.gamma_m = gamma_m


class DivergentOptimum(SidebandError):
    """No finite optimal photon number (phase noise switched off)."""


class Unstable(SidebandError):
    """Runaway heating in a time-domain simulation."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NotThermalized(SidebandError):
    """Trajectory too short compared to the damping time."""


class TooShort(SidebandError):
    """Not enough samples for the requested spectral averaging."""


class RoiOutOfBand(SidebandError):
    """Region of interest extends outside the spectrum band."""


class BadReference(SidebandError):
    """Calibration reference trace has no usable mechanical peak."""


class NoMinimum(SidebandError):
    """Objective is monotone over the search window."""


class Unidentifiable(SidebandError):
    """Data carry no information about the phase-noise level."""
