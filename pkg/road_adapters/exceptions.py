"""
Custom exceptions for road-adapters.
"""

from typing import Iterable, Optional


class RoadError(Exception):
    """Base exception class for road-adapters operations."""
    pass


class DimensionError(RoadError):
    """Raised when shapes or lengths do not conform."""
    pass


class NumericError(RoadError):
    """Raised when a computation produces non-finite values."""

    def __init__(self, message: str, coordinate: Optional[int] = None) -> None:
        super().__init__(message)
        self.coordinate = coordinate


class DivergedError(RoadError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message: str, epoch: int) -> None:
        super().__init__(message)
        self.epoch = epoch


class PreconditionError(RoadError):
    """Raised when an operation's contract is violated by its inputs."""
    pass


class UndefinedMetricError(PreconditionError):
    """Raised when a representation metric is undefined (zero vectors)."""
    pass


class RoutingError(RoadError):
    """Raised when a batch cannot be routed to one serving kernel."""
    pass


class RegistryFrozenError(RoutingError):
    """Raised on registry mutation after freeze or serving before freeze."""
    pass


class MeasurementError(RoadError):
    """Raised when a benchmark measurement is below timer resolution."""
    pass


class CompositionConflictError(RoadError):
    """Raised when subspace masks overlap."""

    def __init__(self, message: str, blocks: Iterable[int] = ()) -> None:
        super().__init__(message)
        self.blocks = sorted(blocks)


class AdapterFileError(RoadError):
    """Raised when adapters cannot be written to disk."""
    pass


class CorruptFileError(AdapterFileError):
    """Raised when an adapter file fails validation on load."""

    def __init__(self, message: str, field: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(RoadError):
    """Raised when a run configuration is malformed."""
    pass


class ReportFormatError(RoadError):
    """Raised when a report file has an unknown schema."""
    pass
