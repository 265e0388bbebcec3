"""
Beacon Protocol

Assisted-RFID application protocol: the roadside unit broadcasts its
identification periodically; the mobile node filters, deduplicates and
stores what it hears as IdentificationRecords.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NewType, Optional, Set, Tuple

import structlog

from . import mobility, radio
from .exceptions import ProtocolError
from .radio import ProfileBundle, RadioProfile, Technology
from .sim_engine import EventKind, Simulator

logger = structlog.get_logger()

NodeId = NewType("NodeId", int)

SHADOWING_STREAM = "radio-loss"
RENDEZVOUS_STREAM = "ble-latency"


@dataclass(frozen=True)
class Frame:
    """One beacon transmission."""

    beacon_id: NodeId
    seq: int
    tx_time: float
    payload_bytes: int
    technology: Technology
    group_id: str
    carrier_frequency: float
    data_rate: int


@dataclass(frozen=True)
class IdentificationRecord:
    """A received identification carried by the mobile node."""

    beacon_id: NodeId
    seq: int
    rx_time: float
    latency: float

    @property
    def key(self) -> Tuple[int, int]:
        return (self.beacon_id, self.seq)

    def to_dict(self) -> dict:
        return {
            "beacon_id": self.beacon_id,
            "seq": self.seq,
            "rx_time": self.rx_time,
            "latency": self.latency,
        }


@dataclass
class MeshGroup:
    """BLE mesh publish/subscribe group."""

    group_id: str
    members: Set[NodeId] = field(default_factory=set)

    def join(self, node_id: NodeId) -> "MeshGroup":
        self.members.add(node_id)
        return self

    def shares(self, a: NodeId, b: NodeId) -> bool:
        return a in self.members and b in self.members


class Outcome(str, Enum):
    RECEIVED = "received"
    RADIO_LOST = "radio_lost"
    FILTERED = "filtered"


@dataclass
class BeaconRow:
    """Per-beacon outcome, one CSV row."""

    seq: int
    tx_time: float
    outcome: Optional[Outcome] = None
    latency: Optional[float] = None


class BeaconLedger:
    """
    Counters and per-beacon outcomes for one run.

    Conservation: sent == received + radio_lost + filtered once every
    frame in flight has arrived.
    """

    def __init__(self):
        self.rows: Dict[int, BeaconRow] = {}
        self.sent = 0
        self.received = 0
        self.radio_lost = 0
        self.filtered = 0
        self.duplicates = 0

    def record_sent(self, frame: Frame) -> BeaconRow:
        self.sent += 1
        row = BeaconRow(seq=frame.seq, tx_time=frame.tx_time)
        self.rows[frame.seq] = row
        return row

    def record_lost(self, frame: Frame) -> None:
        self.radio_lost += 1
        self.rows[frame.seq].outcome = Outcome.RADIO_LOST

    def record_filtered(self, frame: Frame) -> None:
        self.filtered += 1
        self.rows[frame.seq].outcome = Outcome.FILTERED

    def record_received(self, frame: Frame, latency: float) -> None:
        self.received += 1
        row = self.rows[frame.seq]
        row.outcome = Outcome.RECEIVED
        row.latency = latency

    @property
    def in_flight(self) -> int:
        return self.sent - self.received - self.radio_lost - self.filtered

    def ordered_rows(self) -> List[BeaconRow]:
        return [self.rows[seq] for seq in sorted(self.rows)]


class RoadsideUnit:
    """
    Fixed transmitter beside the road.

    Example:
        >>> rsu = RoadsideUnit(NodeId(1), placement, bundle, frame_bytes=108, group_id="g1")
        >>> rsu_start(sim, rsu, beacon_period=1.0, run_length=240.0)
    """

    def __init__(
        self,
        node_id: NodeId,
        placement: mobility.RsuPlacement,
        bundle: ProfileBundle,
        frame_bytes: int,
        group_id: str,
    ):
        self.node_id = node_id
        self.placement = placement
        self.bundle = bundle
        self.frame_bytes = frame_bytes
        self.group_id = group_id
        self.beacon_period = 0.0
        self.start_time = 0.0
        self.beacon_count = 0
        self.next_seq = 0

    @property
    def airtime(self) -> float:
        return radio.airtime(self.bundle.profile, self.frame_bytes)

    def make_frame(self, now: float) -> Frame:
        profile = self.bundle.profile
        frame = Frame(
            beacon_id=self.node_id,
            seq=self.next_seq,
            tx_time=now,
            payload_bytes=self.frame_bytes,
            technology=profile.technology,
            group_id=self.group_id,
            carrier_frequency=profile.carrier_frequency,
            data_rate=profile.data_rate,
        )
        self.next_seq += 1
        return frame


class MobileNode:
    """Vehicle-mounted receiver and identification store."""

    def __init__(
        self,
        node_id: NodeId,
        trajectory: mobility.Trajectory,
        rx_profile: RadioProfile,
        mesh: Optional[MeshGroup] = None,
    ):
        """
        Args:
            node_id: Vehicle node id
            trajectory: A -> B -> A route
            rx_profile: Receiver profile
            mesh: BLE mesh group the vehicle subscribes to (joined here)
        """
        self.node_id = node_id
        self.trajectory = trajectory
        self.rx_profile = rx_profile
        self.mesh = mesh.join(node_id) if mesh is not None else None
        self.records: Dict[Tuple[int, int], IdentificationRecord] = {}
        self.synced: Set[Tuple[int, int]] = set()

    def accepts(self, frame: Frame) -> bool:
        """Shared mesh group for BLE, frequency/rate match for Wize."""
        if frame.technology is not self.rx_profile.technology:
            return False
        if frame.technology is Technology.BLE5:
            return (
                self.mesh is not None
                and frame.group_id == self.mesh.group_id
                and self.mesh.shares(frame.beacon_id, self.node_id)
            )
        return (
            frame.carrier_frequency == self.rx_profile.carrier_frequency
            and frame.data_rate == self.rx_profile.data_rate
        )

    def unsynced(self) -> List[IdentificationRecord]:
        """Records not yet pushed to the gateway layer, in reception order."""
        return [record for key, record in self.records.items() if key not in self.synced]

    def mark_synced(self, record: IdentificationRecord) -> None:
        self.synced.add(record.key)


def rsu_start(
    sim: Simulator,
    rsu: RoadsideUnit,
    beacon_period: float,
    run_length: float,
) -> int:
    """
    Begin periodic identification broadcast.

    Beacons fire at depart + k·period for every k with k·period <= run_length,
    i.e. floor(run_length / period) + 1 of them.

    Args:
        sim: Run engine
        rsu: Transmitter
        beacon_period: Seconds between beacons (> 0)
        run_length: Broadcast window in seconds

    Returns:
        Event id of the first beacon-tx

    Raises:
        ProtocolError: If beacon_period is not positive
    """
    if not beacon_period > 0:
        raise ProtocolError(f"beacon_period must be positive, got {beacon_period}")
    rsu.beacon_period = beacon_period
    rsu.beacon_count = int(run_length / beacon_period + 1e-9) + 1
    rsu.next_seq = 0
    rsu.start_time = sim.now
    logger.debug("RSU started", rsu=rsu.node_id, period=beacon_period, beacons=rsu.beacon_count)
    return sim.schedule(EventKind.BEACON_TX, sim.now, payload=rsu)


def on_beacon_tx(
    sim: Simulator,
    rsu: RoadsideUnit,
    mobile: MobileNode,
    ledger: BeaconLedger,
) -> Optional[int]:
    """
    Transmit one beacon and decide whether the vehicle hears it.

    Returns:
        Event id of the scheduled frame-arrival, or None when radio-lost
    """
    now = sim.now
    frame = rsu.make_frame(now)
    ledger.record_sent(frame)

    if rsu.next_seq < rsu.beacon_count:
        sim.schedule(
            EventKind.BEACON_TX, rsu.start_time + rsu.next_seq * rsu.beacon_period, payload=rsu
        )

    vehicle = mobility.position_at(mobile.trajectory, now)
    d = max(mobility.distance(vehicle, rsu.placement.position), radio.REFERENCE_DISTANCE)
    moved = mobile.trajectory.speed * rsu.airtime

    bundle = rsu.bundle
    received = radio.reception_decision(
        bundle.profile, bundle.link, d, now, sim.stream(SHADOWING_STREAM), moved=moved
    )
    if not received:
        ledger.record_lost(frame)
        logger.debug("Beacon lost", seq=frame.seq, t=now, distance=round(d, 2))
        return None

    delay = radio.end_to_end_latency(
        bundle.profile, bundle.latency, rsu.frame_bytes, sim.stream(RENDEZVOUS_STREAM)
    )
    return sim.schedule(EventKind.FRAME_ARRIVAL, now + delay, payload=frame)


def on_frame_arrival(
    mobile: MobileNode,
    frame: Frame,
    now: float,
    ledger: BeaconLedger,
) -> Optional[IdentificationRecord]:
    """
    Store a frame that reached the vehicle.

    Returns:
        The new record; None when filtered or duplicate
    """
    if not mobile.accepts(frame):
        ledger.record_filtered(frame)
        logger.debug("Frame filtered", seq=frame.seq, group=frame.group_id)
        return None

    key = (frame.beacon_id, frame.seq)
    if key in mobile.records:
        ledger.duplicates += 1
        return None

    record = IdentificationRecord(
        beacon_id=frame.beacon_id,
        seq=frame.seq,
        rx_time=now,
        latency=now - frame.tx_time,
    )
    mobile.records[key] = record
    ledger.record_received(frame, record.latency)
    return record
