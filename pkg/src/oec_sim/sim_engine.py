"""
Discrete-Event Engine

Virtual clock, (fire_at, sequence)-ordered event queue and labeled,
seeded random streams. One Simulator per run; nothing here is shared
between runs.
"""

import heapq
import itertools
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Set

import numpy as np
import structlog

from .exceptions import SchedulingError, UnknownStreamError

logger = structlog.get_logger()

SEED_MASK = (1 << 64) - 1


class EventKind(str, Enum):
    """Tagged event payload kinds."""

    BEACON_TX = "beacon-tx"
    FRAME_ARRIVAL = "frame-arrival"
    NODE_MOVE_SAMPLE = "node-move-sample"
    GATEWAY_SYNC = "gateway-sync"
    RUN_END = "run-end"


@dataclass(order=True, frozen=True)
class Event:
    """
    One scheduled event.

    Ordering is lexicographic on (fire_at, sequence); kind and payload
    never take part in comparisons.
    """

    fire_at: float
    sequence: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)


class RngStream:
    """
    Deterministic uniform stream identified by (seed, label).

    Example:
        >>> stream = RngStream(42, "radio-loss")
        >>> stream.draw()  # same value on every run and platform
    """

    def __init__(self, seed: int, label: str):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed & SEED_MASK
        self.label = label
        entropy = [self.seed, zlib.crc32(label.encode("utf-8"))]
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def draw(self) -> float:
        """Next uniform value in [0, 1)."""
        return float(self._generator.random())

    def normal(self, mean: float, sigma: float) -> float:
        """Next Gaussian value; sigma == 0 still consumes one draw."""
        return float(self._generator.normal(mean, sigma))

    def uniform(self, low: float, high: float) -> float:
        """Next uniform value in [low, high)."""
        return float(self._generator.uniform(low, high))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"


def rng_draw(stream: RngStream) -> float:
    """Next value of the stream's deterministic sequence in [0, 1)."""
    return stream.draw()


Handler = Callable[[Event], None]


class Simulator:
    """
    Single-run discrete-event core.

    Example:
        >>> sim = Simulator(seed=42, streams=["radio-loss"])
        >>> sim.on(EventKind.RUN_END, lambda ev: None)
        >>> sim.schedule(EventKind.RUN_END, fire_at=10.0)
        1
        >>> sim.run_until(10.0)
        1
    """

    def __init__(self, seed: int, streams: Iterable[str] = ()):
        """
        Args:
            seed: Base seed of the run
            streams: Labels of the random streams this run may draw from
        """
        self.seed = seed
        self._now = 0.0
        self._queue: List[Event] = []
        self._sequence = itertools.count(1)
        self._cancelled: Set[int] = set()
        self._pending: Set[int] = set()
        self._handlers: Dict[EventKind, Handler] = {}
        self._streams: Dict[str, RngStream] = {}
        for label in streams:
            self.register_stream(label)

    @property
    def now(self) -> float:
        """Current virtual time in seconds."""
        return self._now

    @property
    def pending_count(self) -> int:
        """Events scheduled and not yet fired or cancelled."""
        return len(self._pending)

    # Random streams

    def register_stream(self, label: str) -> RngStream:
        """Register (or return the existing) stream for a label."""
        if label not in self._streams:
            self._streams[label] = RngStream(self.seed, label)
        return self._streams[label]

    def stream(self, label: str) -> RngStream:
        """
        Look up a registered stream.

        Raises:
            UnknownStreamError: If the label was never registered
        """
        try:
            return self._streams[label]
        except KeyError:
            raise UnknownStreamError(f"stream {label!r} is not registered for this run") from None

    def rng_draw(self, label: str) -> float:
        """Next uniform value in [0, 1) from the labeled stream."""
        return self.stream(label).draw()

    def rng_normal(self, label: str, mean: float, sigma: float) -> float:
        return self.stream(label).normal(mean, sigma)

    def rng_uniform(self, label: str, low: float, high: float) -> float:
        return self.stream(label).uniform(low, high)

    # Event queue

    def on(self, kind: EventKind, handler: Handler) -> None:
        """Register the handler for an event kind (one per kind)."""
        self._handlers[kind] = handler

    def schedule(self, kind: EventKind, fire_at: float, payload: Any = None) -> int:
        """
        Enqueue an event.

        Args:
            kind: Event kind
            fire_at: Absolute virtual time
            payload: Opaque data handed to the handler

        Returns:
            Event id (its sequence number), usable with cancel()

        Raises:
            SchedulingError: If fire_at lies before now
        """
        if fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule {kind.value} at t={fire_at!r}: now is t={self._now!r}"
            )
        event = Event(fire_at=float(fire_at), sequence=next(self._sequence), kind=kind, payload=payload)
        heapq.heappush(self._queue, event)
        self._pending.add(event.sequence)
        return event.sequence

    def cancel(self, event_id: int) -> bool:
        """
        Cancel a pending event.

        Returns:
            False if the event already fired or was already cancelled
        """
        if event_id not in self._pending:
            return False
        self._pending.discard(event_id)
        self._cancelled.add(event_id)
        return True

    def run_until(self, t_end: float) -> int:
        """
        Dispatch every event with fire_at <= t_end, then advance now to t_end.

        Returns:
            Number of dispatched events

        Raises:
            SchedulingError: If t_end lies before now, or an event kind has no handler
        """
        if t_end < self._now:
            raise SchedulingError(f"run_until({t_end!r}) is before now={self._now!r}")

        dispatched = 0
        while self._queue and self._queue[0].fire_at <= t_end:
            event = heapq.heappop(self._queue)
            if event.sequence in self._cancelled:
                self._cancelled.discard(event.sequence)
                continue
            self._pending.discard(event.sequence)

            handler = self._handlers.get(event.kind)
            if handler is None:
                raise SchedulingError(f"no handler registered for {event.kind.value}")

            self._now = event.fire_at
            handler(event)
            dispatched += 1

        self._now = float(t_end)
        logger.debug("Engine advanced", now=self._now, dispatched=dispatched)
        return dispatched
