"""Exception hierarchy shared by the simulation services and the runner."""

from typing import Optional


class SimulationError(Exception):
    """Base class for every failure raised by the toolkit."""


class ConfigurationError(SimulationError, ValueError):
    """Invalid scheme, antenna set-up, grid or experiment spec."""

    def __init__(
        self, message: str, field: Optional[str] = None, line: Optional[int] = None
    ):
        super().__init__(message)
        self.field = field
        self.line = line

    def diagnostic(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        what = f"{self.field}: " if self.field else ""
        return f"{where}{what}{self.args[0]}"


class DomainError(SimulationError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class FramingError(SimulationError, ValueError):
    """Bit block length does not match the configured spectral efficiency."""


class UnsupportedClosedFormError(SimulationError):
    """No closed form exists (or is published) for the requested combination."""


class UndefinedExpectationError(SimulationError, ValueError):
    """Expectation diverges for the requested parameters."""


class DetectorUndefinedError(SimulationError):
    """Receive constellation is not unique, so detection is ambiguous."""


class EstimationError(SimulationError):
    """Not enough reliable points to estimate a quantity."""
