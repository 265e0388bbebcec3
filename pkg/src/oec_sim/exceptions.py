"""
Simulator Exceptions

One hierarchy for every error the simulator raises on purpose.
Counted outcomes (radio loss, filtered frames, TTL drops) are not errors.
"""

from typing import Optional


class OecSimError(Exception):
    """Base class for simulator errors."""


class SchedulingError(OecSimError):
    """Event scheduled in the past, or dispatched without a handler."""


class UnknownStreamError(OecSimError):
    """Random stream label not registered for this run."""


class MobilityError(OecSimError):
    """Query outside the traversal window."""


class RadioModelError(OecSimError):
    """Link model called outside its domain."""


class ProtocolError(OecSimError):
    """Invalid beacon protocol configuration."""


class NoDataError(OecSimError):
    """Statistic requested over an empty sample (never reported as 0)."""


class DuplicateRunError(OecSimError):
    """Same (scenario_id, repetition) given twice to a comparison."""


class RunAbortedError(OecSimError):
    """A run raised and produced no metrics."""

    def __init__(self, scenario_id: str, repetition: int, cause: str):
        super().__init__(f"Run {scenario_id}#{repetition} aborted: {cause}")
        self.scenario_id = scenario_id
        self.repetition = repetition
        self.cause = cause


class ScenarioError(OecSimError):
    """Scenario or profile file rejected."""


class ScenarioParseError(ScenarioError):
    """Malformed key-value line."""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class ScenarioValidationError(ScenarioError):
    """Field value violates a Scenario invariant."""

    def __init__(self, field: str, message: str, path: Optional[str] = None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}invalid '{field}': {message}")
        self.field = field
        self.path = path


class RoutingError(OecSimError):
    """Message rejected before routing (empty payload)."""
