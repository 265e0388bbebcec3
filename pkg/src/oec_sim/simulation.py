"""
Single Run

Wires engine, mobility, radio, beacon protocol and gateway layer into one
deterministic run of a scenario repetition.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import structlog

from . import mobility
from .beacon_protocol import (
    RENDEZVOUS_STREAM,
    SHADOWING_STREAM,
    BeaconLedger,
    MeshGroup,
    MobileNode,
    NodeId,
    RoadsideUnit,
    on_beacon_tx,
    on_frame_arrival,
    rsu_start,
)
from .config import get_settings
from .exceptions import ProtocolError
from .gateway import ContactGraph, GatewayLayer
from .metrics import RunMetrics, build_run_metrics
from .scenario import Scenario
from .sim_engine import Event, EventKind, Simulator

logger = structlog.get_logger()

RSU_ID = NodeId(1)
MOBILE_ID = NodeId(2)
FIRST_GATEWAY_ID = 101


@dataclass
class RunResult:
    metrics: RunMetrics
    dht_dump: List[str] = field(default_factory=list)
    positions: List[Tuple[float, float, float]] = field(default_factory=list)
    sync_times: Dict[Tuple[int, int], float] = field(default_factory=dict)


def gateway_windows(traj: mobility.Trajectory, position: mobility.Point, range_m: float) -> List[Tuple[float, float]]:
    """Contact windows with a gateway; open-ended when the vehicle parks in range."""
    windows = mobility.contact_intervals(traj, position, range_m)
    # t = inf asks where the parked vehicle is
    if mobility.in_contact(traj, position, range_m, math.inf):
        if windows and windows[-1][1] >= traj.arrive_at - mobility.EPSILON:
            windows[-1] = (windows[-1][0], math.inf)
        else:
            windows.append((traj.arrive_at, math.inf))
    return windows


def run_scenario(
    scenario: Scenario,
    repetition: int = 0,
    profile_dir: Optional[str | Path] = None,
    move_sample_period: Optional[float] = None,
) -> RunResult:
    """
    Execute one repetition of a scenario.

    Repetition r runs with seed scenario.seed + r. The run lasts the full
    A -> B -> A traversal plus drain_time, so frames still in flight when
    the vehicle parks are delivered before counters are read.

    Args:
        scenario: Validated scenario
        repetition: Repetition index
        profile_dir: Radio profile directory (settings default if None)
        move_sample_period: Record the vehicle position every so many seconds

    Returns:
        RunResult with metrics and the DHT dump lines

    Raises:
        OecSimError: Any model precondition violated during the run
    """
    settings = get_settings()
    bundle = scenario.radio_bundle(profile_dir or settings.profile_dir)
    seed = scenario.seed + repetition

    sim = Simulator(seed, streams=[SHADOWING_STREAM, RENDEZVOUS_STREAM])
    traj = scenario.trajectory()
    rsu = RoadsideUnit(RSU_ID, scenario.placement(), bundle, scenario.frame_bytes, scenario.rsu_group)
    rsu_mesh = MeshGroup(scenario.rsu_group).join(RSU_ID)
    mesh = rsu_mesh if scenario.mobile_group == scenario.rsu_group else MeshGroup(scenario.mobile_group)
    mobile = MobileNode(MOBILE_ID, traj, bundle.profile, mesh=mesh)
    ledger = BeaconLedger()
    run_end = traj.duration + scenario.drain_time
    positions: List[Tuple[float, float, float]] = []

    contacts = ContactGraph()
    layer: Optional[GatewayLayer] = None
    if scenario.gateways:
        layer = GatewayLayer(
            contacts,
            replication_factor=scenario.replication_factor,
            message_ttl=scenario.message_ttl,
            record_transfer_time=scenario.record_transfer_time,
        )
        gateway_ids = [NodeId(FIRST_GATEWAY_ID + i) for i in range(len(scenario.gateways))]
        for gid in gateway_ids:
            layer.add_gateway(gid)
        layer.add_mobile(mobile, home_gateway=gateway_ids[0])
        layer.bootstrap(now=0.0)

        for gid, position in zip(gateway_ids, scenario.gateways):
            windows = gateway_windows(traj, position, scenario.gateway_range)
            contacts.add_windows(MOBILE_ID, gid, windows)
            for start, end in windows:
                if start <= run_end:
                    deadline = None if math.isinf(end) else end
                    sim.schedule(EventKind.GATEWAY_SYNC, start, payload=(gid, deadline))

    def handle_beacon(event: Event) -> None:
        on_beacon_tx(sim, event.payload, mobile, ledger)

    def handle_arrival(event: Event) -> None:
        record = on_frame_arrival(mobile, event.payload, sim.now, ledger)
        if record is not None and layer is not None:
            layer.carry(mobile, record, sim.now)

    def handle_sync(event: Event) -> None:
        gid, deadline = event.payload
        layer.sync_identifications(mobile, gid, sim.now, deadline)
        following = sim.now + scenario.sync_period
        if following <= run_end and (deadline is None or following <= deadline):
            sim.schedule(EventKind.GATEWAY_SYNC, following, payload=(gid, deadline))

    def handle_move(event: Event) -> None:
        here = mobility.position_at(traj, sim.now) if sim.now <= traj.arrive_at else traj.final_position
        positions.append((sim.now, here.x, here.y))
        logger.debug("Vehicle position", t=sim.now, x=round(here.x, 3), y=round(here.y, 3))
        following = sim.now + move_sample_period
        if following <= run_end:
            sim.schedule(EventKind.NODE_MOVE_SAMPLE, following)

    def handle_end(event: Event) -> None:
        if layer is None:
            return
        for gid in layer.gateway_ids:
            if contacts.in_contact(MOBILE_ID, gid, sim.now):
                layer.sync_identifications(mobile, gid, sim.now)
        layer.flush_relays(sim.now)
        layer.router.expire(sim.now)

    sim.on(EventKind.BEACON_TX, handle_beacon)
    sim.on(EventKind.FRAME_ARRIVAL, handle_arrival)
    sim.on(EventKind.GATEWAY_SYNC, handle_sync)
    sim.on(EventKind.NODE_MOVE_SAMPLE, handle_move)
    sim.on(EventKind.RUN_END, handle_end)

    rsu_start(sim, rsu, scenario.beacon_period, run_length=traj.duration)
    if move_sample_period:
        sim.schedule(EventKind.NODE_MOVE_SAMPLE, 0.0)
    sim.schedule(EventKind.RUN_END, run_end)
    sim.run_until(run_end)

    if ledger.in_flight:
        raise ProtocolError(
            f"{ledger.in_flight} frames still in flight at run end; increase drain_time"
        )

    metrics = build_run_metrics(
        scenario_id=scenario.scenario_id,
        repetition=repetition,
        technology=scenario.technology.value,
        data_rate=scenario.data_rate or 0,
        speed_kmh=scenario.speed,
        beacons=ledger.ordered_rows(),
        sent=ledger.sent,
        received=ledger.received,
        radio_lost=ledger.radio_lost,
        filtered=ledger.filtered,
        synced=len(mobile.synced),
        dht_drops=layer.dht_drops if layer else 0,
    )
    logger.info(
        "Run finished",
        scenario_id=scenario.scenario_id,
        repetition=repetition,
        seed=seed,
        sent=metrics.sent,
        received=metrics.received,
        synced=metrics.synced,
    )
    return RunResult(
        metrics=metrics,
        dht_dump=layer.dht.dump_lines() if layer and layer.dht else [],
        positions=positions,
        sync_times=dict(layer.sync_times) if layer else {},
    )
