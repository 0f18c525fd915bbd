"""Error hierarchy shared by the simulator modules and the CLI."""


class SimulationError(Exception):
    """Base class for every error the simulator raises on purpose"""

    exit_code = 1


class DomainError(SimulationError, ValueError):
    """Physical input outside the range a formula is defined on"""


class StructuralError(SimulationError, ValueError):
    """Length, index or layout mismatch between collaborating objects"""


class ConfigError(SimulationError):
    """Unreadable or invalid run configuration"""

    exit_code = 2


class CalibrationError(SimulationError):
    """A calibration fit could not be bracketed or solved"""

    exit_code = 3

    def __init__(self, fit: str, message: str, bracket=None):
        self.fit = fit
        self.bracket = bracket
        detail = f"{fit}: {message}"
        if bracket is not None:
            detail += f" (bracket {bracket[0]:.6g} .. {bracket[1]:.6g})"
        super().__init__(detail)


class InfeasibleError(SimulationError):
    """No visited configuration satisfied the QBER security threshold"""

    exit_code = 4
