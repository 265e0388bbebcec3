"""
Beacon protocol: periodic broadcast, filtering, deduplication, conservation.
"""

import pytest

from oec_sim.beacon_protocol import (
    RENDEZVOUS_STREAM,
    SHADOWING_STREAM,
    BeaconLedger,
    Frame,
    MeshGroup,
    MobileNode,
    NodeId,
    Outcome,
    RoadsideUnit,
    on_beacon_tx,
    on_frame_arrival,
    rsu_start,
)
from oec_sim.exceptions import ProtocolError
from oec_sim.mobility import Point, RsuPlacement, Trajectory, km_per_hour_to_mps
from oec_sim.radio import Technology, load_profile, profile_filename
from oec_sim.sim_engine import EventKind, Simulator

ROUTE_A = Point(0.0, 0.0)
ROUTE_B = Point(1000.0, 0.0)


def _run(bundle, rx_profile=None, group="oec-mesh", kmh=30, seed=1, period=1.0, rsu_joins=True):
    """Drive one traversal and return (ledger, mobile, rsu, sim)."""
    sim = Simulator(seed, streams=[SHADOWING_STREAM, RENDEZVOUS_STREAM])
    traj = Trajectory(ROUTE_A, ROUTE_B, km_per_hour_to_mps(kmh))
    placement = RsuPlacement.beside_route(ROUTE_A, ROUTE_B)
    rsu = RoadsideUnit(NodeId(1), placement, bundle, frame_bytes=108, group_id="oec-mesh")
    mesh = MeshGroup(group)
    if rsu_joins and group == "oec-mesh":
        mesh.join(NodeId(1))
    mobile = MobileNode(NodeId(2), traj, rx_profile or bundle.profile, mesh=mesh)
    ledger = BeaconLedger()

    sim.on(EventKind.BEACON_TX, lambda ev: on_beacon_tx(sim, ev.payload, mobile, ledger))
    sim.on(EventKind.FRAME_ARRIVAL, lambda ev: on_frame_arrival(mobile, ev.payload, sim.now, ledger))
    rsu_start(sim, rsu, beacon_period=period, run_length=traj.duration)
    sim.run_until(traj.duration + 5.0)
    return ledger, mobile, rsu, sim


@pytest.fixture(scope="module")
def ble(profile_dir):
    return load_profile(profile_dir / profile_filename(Technology.BLE5))


@pytest.fixture(scope="module")
def wize(profile_dir):
    return {rate: load_profile(profile_dir / profile_filename(Technology.WIZE, rate)) for rate in (2400, 6400)}


def test_beacon_count_covers_whole_traversal(ble):
    ledger, _, rsu, _ = _run(ble, kmh=30)
    assert rsu.beacon_count == 241
    assert ledger.sent == 241


def test_beacons_fire_on_the_period_grid(ble):
    ledger, _, _, _ = _run(ble, kmh=50, period=0.5)
    times = [row.tx_time for row in ledger.ordered_rows()]
    assert times == pytest.approx([k * 0.5 for k in range(len(times))])


def test_non_positive_period_rejected(ble):
    sim = Simulator(1)
    rsu = RoadsideUnit(NodeId(1), RsuPlacement(Point(0, 0)), ble, 108, "g")
    with pytest.raises(ProtocolError):
        rsu_start(sim, rsu, beacon_period=0.0, run_length=10.0)


@pytest.mark.parametrize("kmh", [30, 50, 70])
def test_frames_are_conserved(ble, wize, kmh):
    for bundle in (ble, wize[2400], wize[6400]):
        ledger, mobile, _, sim = _run(bundle, kmh=kmh, seed=kmh)
        assert ledger.sent == ledger.received + ledger.radio_lost + ledger.filtered
        assert ledger.in_flight == 0
        assert sim.pending_count == 0
        assert len(mobile.records) == ledger.received


def test_latency_is_arrival_minus_transmission(ble):
    ledger, mobile, _, _ = _run(ble)
    for record in mobile.records.values():
        row = ledger.rows[record.seq]
        assert row.outcome is Outcome.RECEIVED
        assert record.rx_time - row.tx_time == pytest.approx(record.latency)
        assert 0.55 < record.latency < 0.96


def test_ble_frames_outside_mesh_group_are_filtered(ble):
    ledger, mobile, _, _ = _run(ble, group="another-mesh")
    assert ledger.received == 0
    assert ledger.filtered > 0
    assert ledger.sent == ledger.radio_lost + ledger.filtered
    assert mobile.records == {}


def test_wize_receiver_on_other_rate_filters_everything(wize):
    ledger, _, _, _ = _run(wize[2400], rx_profile=wize[6400].profile)
    assert ledger.received == 0
    assert ledger.sent == ledger.radio_lost + ledger.filtered


def test_duplicate_frames_are_suppressed(ble):
    traj = Trajectory(ROUTE_A, ROUTE_B, 10.0)
    mobile = MobileNode(NodeId(2), traj, ble.profile, mesh=MeshGroup("g").join(NodeId(1)))
    ledger = BeaconLedger()
    frame = Frame(NodeId(1), 0, 0.0, 108, Technology.BLE5, "g", ble.profile.carrier_frequency, ble.profile.data_rate)
    ledger.record_sent(frame)

    first = on_frame_arrival(mobile, frame, 0.75, ledger)
    second = on_frame_arrival(mobile, frame, 0.80, ledger)

    assert first is not None and second is None
    assert ledger.received == 1
    assert ledger.duplicates == 1
    assert mobile.records[(1, 0)].latency == pytest.approx(0.75)


def test_mesh_group_membership():
    group = MeshGroup("oec-mesh").join(NodeId(1)).join(NodeId(2))
    assert group.shares(NodeId(1), NodeId(2))
    assert not group.shares(NodeId(1), NodeId(3))


def test_ble_frames_need_rsu_and_vehicle_in_one_group(ble):
    ledger, mobile, _, _ = _run(ble, rsu_joins=False)
    assert mobile.mesh.members == {NodeId(2)}
    assert ledger.received == 0
    assert ledger.filtered > 0


def test_vehicle_joins_its_mesh_group(ble):
    _, mobile, _, _ = _run(ble)
    assert mobile.mesh.shares(NodeId(1), NodeId(2))
    assert len(mobile.records) > 0


def test_rsu_on_the_road_axis_is_clamped_to_reference_distance(ble):
    sim = Simulator(3, streams=[SHADOWING_STREAM, RENDEZVOUS_STREAM])
    traj = Trajectory(ROUTE_A, ROUTE_B, 10.0)
    rsu = RoadsideUnit(NodeId(1), RsuPlacement(ROUTE_A), ble, 108, "oec-mesh")
    mobile = MobileNode(NodeId(2), traj, ble.profile, mesh=MeshGroup("oec-mesh").join(NodeId(1)))
    ledger = BeaconLedger()
    sim.on(EventKind.BEACON_TX, lambda ev: on_beacon_tx(sim, ev.payload, mobile, ledger))
    sim.on(EventKind.FRAME_ARRIVAL, lambda ev: on_frame_arrival(mobile, ev.payload, sim.now, ledger))
    rsu_start(sim, rsu, beacon_period=1.0, run_length=0.0)
    sim.run_until(2.0)
    assert ledger.sent == 1
    assert ledger.received == 1


def test_unsynced_records_follow_reception_order(ble):
    _, mobile, _, _ = _run(ble)
    records = mobile.unsynced()
    assert [r.seq for r in records] == sorted(r.seq for r in records)
    mobile.mark_synced(records[0])
    assert mobile.unsynced() == records[1:]
