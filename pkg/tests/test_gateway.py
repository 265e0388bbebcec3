"""
OEC gateway layer: peer discovery, store-carry-forward routing, DHT and
record sync.
"""

import json
from collections import deque

import numpy as np
import pytest

from oec_sim.beacon_protocol import IdentificationRecord, MeshGroup, MobileNode, NodeId
from oec_sim.exceptions import RoutingError
from oec_sim.gateway import (
    CLOUD_ID,
    ContactGraph,
    DataRouter,
    Dht,
    DhtLookup,
    GatewayLayer,
    Layer,
    PeerRecord,
    RouteOutcome,
    RoutingTable,
    discover_peers,
    exchange_peer_tables,
    gossip_round,
    latest,
    record_key,
    xor_distance,
)
from oec_sim.mobility import Point, Trajectory, contact_intervals
from oec_sim.radio import Modulation, RadioProfile, Technology

BLE = RadioProfile(Technology.BLE5, 2.402e9, 125_000, 8.0, -103.0, 400.0, Modulation.BLE_CODED, 20.0, 80)


def _peer(peer_id, layer=Layer.GATEWAY, seen=0.0):
    return PeerRecord(NodeId(peer_id), [f"sim://{peer_id}"], layer, seen)


def _mobile(node_id=2, records=0, speed=10.0):
    traj = Trajectory(Point(0.0, 0.0), Point(1000.0, 0.0), speed)
    mobile = MobileNode(NodeId(node_id), traj, BLE, mesh=MeshGroup("oec-mesh").join(NodeId(1)))
    for seq in range(records):
        record = IdentificationRecord(NodeId(1), seq, rx_time=float(seq), latency=0.75)
        mobile.records[record.key] = record
    return mobile


# Peer discovery

def test_empty_exchange_records_only_the_encountered_peer():
    local = RoutingTable(NodeId(10))
    assert discover_peers(local, _peer(20, seen=5.0), [], now=5.0) == 0
    assert local.known() == {20}
    assert local.entries[20] == 20


def test_disjoint_peers_are_learned_symmetrically():
    a, b = RoutingTable(NodeId(1)), RoutingTable(NodeId(2))
    discover_peers(a, _peer(11), [])
    discover_peers(b, _peer(22), [])
    assert exchange_peer_tables(a, b, now=1.0) == (1, 1)
    assert a.known() == {2, 11, 22}
    assert a.entries[22] == 2
    assert b.entries[11] == 1


def test_chain_of_three_closes_in_two_rounds():
    tables = {NodeId(i): RoutingTable(NodeId(i)) for i in (1, 2, 3)}
    edges = [(1, 2), (2, 3)]
    gossip_round(tables, edges, now=0.0)
    assert 3 not in tables[1].known()
    gossip_round(tables, edges, now=1.0)
    for node, table in tables.items():
        assert table.known() | {node} == {1, 2, 3}


def test_repeated_discovery_is_a_no_op():
    local = RoutingTable(NodeId(1))
    theirs = [_peer(3, seen=2.0), _peer(4, seen=2.0)]
    discover_peers(local, _peer(2, seen=5.0), theirs, now=5.0)
    before = {pid: (rec.last_seen, list(rec.addresses)) for pid, rec in local.peers.items()}
    entries = dict(local.entries)

    assert discover_peers(local, _peer(2, seen=5.0), theirs, now=5.0) == 0
    assert {pid: (rec.last_seen, list(rec.addresses)) for pid, rec in local.peers.items()} == before
    assert local.entries == entries


def test_last_seen_never_decreases():
    local = RoutingTable(NodeId(1))
    discover_peers(local, _peer(2), [], now=10.0)
    discover_peers(local, _peer(3), [_peer(2, seen=4.0)], now=12.0)
    assert local.peers[2].last_seen == 10.0


def _random_connected_graph(rng, n):
    nodes = list(range(1, n + 1))
    order = list(rng.permutation(nodes))
    edges = set()
    for i in range(1, n):
        parent = order[int(rng.integers(0, i))]
        edges.add(tuple(sorted((int(order[i]), int(parent)))))
    for a in nodes:
        for b in nodes:
            if a < b and rng.random() < 0.15:
                edges.add((a, b))
    return nodes, sorted(edges)


def _closure(nodes, edges):
    index = {node: i for i, node in enumerate(nodes)}
    reach = np.eye(len(nodes), dtype=bool)
    for a, b in edges:
        reach[index[a], index[b]] = reach[index[b], index[a]] = True
    for k in range(len(nodes)):
        reach |= reach[:, [k]] & reach[[k], :]
    return {node: {other for other in nodes if reach[index[node], index[other]]} for node in nodes}


def _diameter(nodes, edges):
    neighbours = {node: set() for node in nodes}
    for a, b in edges:
        neighbours[a].add(b)
        neighbours[b].add(a)
    longest = 0
    for source in nodes:
        depth = {source: 0}
        queue = deque([source])
        while queue:
            node = queue.popleft()
            for nxt in neighbours[node]:
                if nxt not in depth:
                    depth[nxt] = depth[node] + 1
                    queue.append(nxt)
        longest = max(longest, max(depth.values()))
    return longest


def test_discovery_reaches_closure_within_diameter_rounds():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        nodes, edges = _random_connected_graph(rng, n)
        tables = {NodeId(node): RoutingTable(NodeId(node)) for node in nodes}
        for round_no in range(_diameter(nodes, edges)):
            gossip_round(tables, edges, now=float(round_no))

        closure = _closure(nodes, edges)
        for node, table in tables.items():
            assert table.known() | {node} == closure[node]
            for dest, hop in table.entries.items():
                assert hop != node
                assert dest != node


# Data routing

def _router(ttl=300.0, capacity=10_000):
    contacts = ContactGraph()
    tables = {NodeId(i): RoutingTable(NodeId(i), capacity=capacity) for i in (1, 2, 3)}
    return DataRouter(tables, contacts, default_ttl=ttl), tables, contacts


def test_direct_contact_delivers_immediately():
    router, tables, contacts = _router()
    contacts.add_link(NodeId(1), NodeId(2))
    assert router.route_message(tables[1], NodeId(2), b"id", now=0.0) is RouteOutcome.DELIVERED_DIRECT
    assert router.stats.delivered == 1


def test_next_hop_in_contact_forwards():
    router, tables, contacts = _router()
    contacts.add_link(NodeId(1), NodeId(2))
    contacts.add_link(NodeId(2), NodeId(3))
    tables[1].entries[NodeId(3)] = NodeId(2)
    delivered = []
    router.on_deliver = lambda message, at, now: delivered.append((message.path, at))
    assert router.route_message(tables[1], NodeId(3), b"id", now=0.0) is RouteOutcome.FORWARDED
    assert delivered == [([1, 2, 3], 3)]


def test_unreachable_destination_expires_after_ttl():
    router, tables, _ = _router(ttl=60.0)
    assert router.route_message(tables[1], NodeId(3), b"id", now=0.0) is RouteOutcome.STORED_PENDING
    assert router.expire(59.9) == 0
    assert router.expire(60.0) == 1
    message, dropped_at = router.dropped[0]
    assert dropped_at == 60.0
    assert router.stats.dropped_ttl == 1
    assert router.pending_count == 0


def test_full_pending_queue_counts_a_drop():
    router, tables, _ = _router(capacity=1)
    router.route_message(tables[1], NodeId(3), b"a", now=0.0)
    assert router.route_message(tables[1], NodeId(3), b"b", now=0.0) is RouteOutcome.DROPPED
    assert router.stats.dropped_capacity == 1


def test_empty_message_rejected():
    router, tables, _ = _router()
    with pytest.raises(RoutingError):
        router.route_message(tables[1], NodeId(2), b"", now=0.0)


def test_pending_message_delivered_on_later_contact():
    router, tables, contacts = _router()
    contacts.add_windows(NodeId(1), NodeId(2), [(50.0, 60.0)])
    router.route_message(tables[1], NodeId(2), b"id", now=10.0)
    assert router.on_contact(NodeId(1), now=20.0) == 0
    assert router.on_contact(NodeId(1), now=50.0) == 1
    assert router.pending_count == 0


def test_records_delivered_when_vehicle_returns_to_gateway():
    contacts = ContactGraph()
    layer = GatewayLayer(contacts, replication_factor=1)
    gateway = NodeId(101)
    layer.add_gateway(gateway)
    mobile = _mobile()
    layer.add_mobile(mobile, home_gateway=gateway)
    layer.bootstrap(now=0.0)

    gateway_position = Point(0.0, 20.0)
    windows = contact_intervals(mobile.trajectory, gateway_position, 50.0)
    contacts.add_windows(mobile.node_id, gateway, windows)
    outbound_end, return_start = windows[0][1], windows[1][0]

    for seq, t in enumerate(np.linspace(outbound_end + 1.0, return_start - 1.0, 12)):
        record = IdentificationRecord(NodeId(1), seq, float(t), 0.75)
        mobile.records[record.key] = record
        assert layer.carry(mobile, record, float(t)) is RouteOutcome.STORED_PENDING

    synced = layer.sync_identifications(mobile, gateway, return_start, deadline=windows[1][1])
    assert synced == 12
    assert set(layer.sync_times.values()) == {return_start}


def test_message_accounting_holds_in_random_runs():
    rng = np.random.default_rng(99)
    for _ in range(30):
        contacts = ContactGraph()
        nodes = [NodeId(i) for i in range(1, 7)]
        tables = {node: RoutingTable(node, capacity=int(rng.integers(3, 20))) for node in nodes}
        router = DataRouter(tables, contacts, default_ttl=float(rng.uniform(20, 200)))

        for a in nodes:
            for b in nodes:
                if a < b and rng.random() < 0.4:
                    start = float(rng.uniform(0, 300))
                    contacts.add_windows(a, b, [(start, start + float(rng.uniform(1, 30)))])
        for node in nodes:
            others = [o for o in nodes if o != node]
            tables[node].entries = {int(o): int(rng.choice(others)) for o in others}

        for t in np.sort(rng.uniform(0, 400, size=120)):
            node = nodes[int(rng.integers(0, len(nodes)))]
            if rng.random() < 0.5:
                dest = nodes[int(rng.integers(0, len(nodes)))]
                router.route_message(tables[node], dest, b"x", now=float(t))
            else:
                router.on_contact(node, now=float(t), limit=int(rng.integers(1, 5)))
            if rng.random() < 0.1:
                router.expire(float(t))
            stats = router.stats
            assert stats.delivered + stats.dropped + router.pending_count == stats.injected


# DHT

def test_single_gateway_holds_everything():
    contacts = ContactGraph()
    dht = Dht([NodeId(7)], contacts)
    assert dht.dht_put(record_key(1, 0), b"v", now=0.0) == {7}


def test_placement_is_xor_closest_pair():
    contacts = ContactGraph()
    ids = [NodeId(i) for i in (0x1A2B, 0x9F00, 0x0003, 0xFFFF, 0x7777)]
    for a in ids:
        for b in ids:
            if a < b:
                contacts.add_link(a, b)
    dht = Dht(ids, contacts, replication_factor=2)
    for beacon, seq in [(1, 0), (1, 1), (9, 42), (3, 7)]:
        key = record_key(beacon, seq)
        brute = sorted(ids, key=lambda gid: (gid ^ key, gid))[:2]
        assert dht.dht_put(key, b"v", now=0.0, via=ids[0]) == set(brute)
        assert dht.closest(key, ids) == brute
        assert xor_distance(brute[0], key) <= xor_distance(brute[1], key)


def _five_gateway_dht():
    contacts = ContactGraph()
    ids = [NodeId(101 + i) for i in range(5)]
    for a in ids:
        for b in ids:
            if a < b:
                contacts.add_link(a, b)
    return Dht(ids, contacts, replication_factor=2), contacts, ids


def test_read_your_write_and_never_stored():
    dht, _, ids = _five_gateway_dht()
    key = record_key(1, 5)
    dht.dht_put(key, b"record-5", now=1.0, via=ids[0])
    result = dht.dht_get(key, now=1.0, via=ids[3])
    assert result.status is DhtLookup.FOUND
    assert result.value == b"record-5"
    assert dht.dht_get(record_key(1, 6), now=1.0, via=ids[0]).status is DhtLookup.NOT_FOUND


def test_value_survives_one_partitioned_holder():
    dht, contacts, ids = _five_gateway_dht()
    key = record_key(2, 0)
    holders = sorted(dht.dht_put(key, b"v", now=0.0, via=ids[0]))
    contacts.partition(holders[0])
    asker = next(gid for gid in ids if gid not in holders)
    result = dht.dht_get(key, now=1.0, via=asker)
    assert result.status is DhtLookup.FOUND


def test_all_holders_partitioned_is_unreachable_not_missing():
    dht, contacts, ids = _five_gateway_dht()
    key = record_key(2, 1)
    holders = dht.dht_put(key, b"v", now=0.0, via=ids[0])
    for holder in holders:
        contacts.partition(holder)
    asker = next(gid for gid in ids if gid not in holders)
    assert dht.dht_get(key, now=1.0, via=asker).status is DhtLookup.UNREACHABLE


def test_overwrite_returns_newest_version():
    dht, contacts, ids = _five_gateway_dht()
    key = record_key(4, 4)
    first = sorted(dht.dht_put(key, b"v1", now=0.0, via=ids[0]))
    contacts.partition(first[1])
    asker = next(gid for gid in ids if gid not in first)
    dht.dht_put(key, b"v2", now=1.0, via=asker)
    contacts.heal(first[1])

    result = dht.dht_get(key, now=2.0, via=asker)
    assert (result.version, result.value) == (2, b"v2")
    assert latest([(1, b"v1"), (2, b"v2")]) == (2, b"v2")
    assert latest([(2, b"v2"), (1, b"v1")]) == (2, b"v2")


def test_random_put_get_pairs_never_miss():
    dht, _, ids = _five_gateway_dht()
    rng = np.random.default_rng(5)
    for i in range(1000):
        key = record_key(int(rng.integers(1, 50)), int(rng.integers(0, 1000)))
        value = f"value-{i}".encode()
        dht.dht_put(key, value, now=float(i), via=ids[int(rng.integers(0, 5))])
        result = dht.dht_get(key, now=float(i), via=ids[int(rng.integers(0, 5))])
        assert result.status is DhtLookup.FOUND
        assert result.value == value


def test_put_with_no_reachable_gateway_is_counted():
    contacts = ContactGraph()
    dht = Dht([NodeId(1), NodeId(2)], contacts)
    assert dht.dht_put(record_key(1, 1), b"v", now=0.0) == set()
    assert dht.failed_puts == 1


def test_dump_lines_describe_each_key():
    dht, _, ids = _five_gateway_dht()
    dht.dht_put(record_key(1, 0), b"12345", now=0.0, via=ids[0])
    dht.dht_put(record_key(1, 0), b"123456", now=1.0, via=ids[0])
    [line] = dht.dump_lines()
    entry = json.loads(line)
    assert entry["key"] == f"{record_key(1, 0):016x}"
    assert entry["version"] == 2
    assert len(entry["holders"]) == 2
    assert entry["value_size"] == 6


# Sync

def _layer_with_gateway(transfer_time=0.0):
    contacts = ContactGraph()
    layer = GatewayLayer(contacts, replication_factor=2, record_transfer_time=transfer_time)
    for gid in (NodeId(101), NodeId(102), NodeId(103)):
        layer.add_gateway(gid)
    layer.bootstrap(now=0.0)
    return layer, contacts


def test_sync_with_nothing_to_push():
    layer, contacts = _layer_with_gateway()
    mobile = _mobile(records=0)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(101), [(0.0, float("inf"))])
    assert layer.sync_identifications(mobile, NodeId(101), now=1.0) == 0


def test_sync_is_idempotent():
    layer, contacts = _layer_with_gateway()
    mobile = _mobile(records=37)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(101), [(0.0, float("inf"))])

    assert layer.sync_identifications(mobile, NodeId(101), now=40.0) == 37
    assert layer.sync_identifications(mobile, NodeId(101), now=41.0) == 0
    assert mobile.unsynced() == []
    for record in mobile.records.values():
        result = layer.dht.dht_get(record_key(record.beacon_id, record.seq), now=42.0, via=NodeId(102))
        assert json.loads(result.value)["seq"] == record.seq


def test_contact_lost_mid_sync_keeps_progress():
    layer, contacts = _layer_with_gateway(transfer_time=0.1)
    mobile = _mobile(records=37)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(101), [(100.0, 101.0), (200.0, 210.0)])

    assert layer.sync_identifications(mobile, NodeId(101), now=100.0, deadline=101.0) == 10
    assert len(mobile.unsynced()) == 27
    assert layer.router.pending_count == 27
    assert layer.sync_identifications(mobile, NodeId(101), now=200.0, deadline=210.0) == 27


def test_records_reach_home_through_a_visited_gateway():
    layer, contacts = _layer_with_gateway()
    mobile = _mobile(records=5)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(103), [(60.0, 70.0)])

    assert layer.sync_identifications(mobile, NodeId(103), now=60.0) == 5
    assert layer.tables[mobile.node_id].entries[101] == 103
    assert CLOUD_ID in layer.tables[101].known()


def test_records_with_expired_messages_are_carried_again():
    contacts = ContactGraph()
    layer = GatewayLayer(contacts, message_ttl=10.0)
    layer.add_gateway(NodeId(101))
    mobile = _mobile(records=3)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    layer.bootstrap(now=0.0)
    contacts.add_windows(mobile.node_id, NodeId(101), [(30.0, 40.0)])

    for record in mobile.records.values():
        layer.carry(mobile, record, now=0.0)
    assert layer.router.expire(20.0) == 3

    assert layer.sync_identifications(mobile, NodeId(101), now=30.0, deadline=40.0) == 3
    stats = layer.router.stats
    assert (stats.injected, stats.delivered, stats.dropped_ttl) == (6, 3, 3)


def test_vehicle_reroutes_through_a_later_gateway():
    layer, contacts = _layer_with_gateway()
    mobile = _mobile(records=0)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(103), [(0.0, 5.0)])
    contacts.add_windows(mobile.node_id, NodeId(102), [(50.0, 60.0)])
    vehicle = layer.tables[mobile.node_id]

    assert layer.sync_identifications(mobile, NodeId(103), now=0.0, deadline=5.0) == 0
    assert vehicle.entries[101] == 103

    record = IdentificationRecord(NodeId(1), 0, rx_time=20.0, latency=0.75)
    mobile.records[record.key] = record
    assert layer.carry(mobile, record, now=20.0) is RouteOutcome.STORED_PENDING

    assert layer.sync_identifications(mobile, NodeId(102), now=55.0, deadline=60.0) == 1
    assert layer.sync_times[record.key] == 55.0
    assert vehicle.entries[101] == 102
    assert vehicle.via[101] == {102, 103}
    assert layer.router.pending_count == 0


def test_record_received_in_contact_with_another_gateway_is_forwarded():
    layer, contacts = _layer_with_gateway()
    mobile = _mobile(records=0)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(103), [(0.0, 5.0)])
    contacts.add_windows(mobile.node_id, NodeId(102), [(50.0, 60.0)])
    layer.sync_identifications(mobile, NodeId(103), now=0.0, deadline=5.0)
    layer.sync_identifications(mobile, NodeId(102), now=50.0, deadline=60.0)

    record = IdentificationRecord(NodeId(1), 7, rx_time=52.0, latency=0.75)
    mobile.records[record.key] = record
    assert layer.carry(mobile, record, now=52.0) is RouteOutcome.FORWARDED
    assert mobile.unsynced() == []


def test_relay_queue_retried_once_home_gateway_heals():
    layer, contacts = _layer_with_gateway()
    mobile = _mobile(records=1)
    layer.add_mobile(mobile, home_gateway=NodeId(101))
    contacts.add_windows(mobile.node_id, NodeId(102), [(10.0, 20.0)])
    contacts.partition(NodeId(101))

    assert layer.sync_identifications(mobile, NodeId(102), now=10.0, deadline=20.0) == 0
    assert len(layer.tables[mobile.node_id].pending) == 0
    assert layer.router.pending_count == 1

    contacts.heal(NodeId(101))
    assert layer.flush_relays(now=30.0) == 1
    assert mobile.unsynced() == []
    assert layer.sync_times[(1, 0)] == 30.0
    assert layer.router.pending_count == 0
    stats = layer.router.stats
    assert stats.injected == stats.delivered + stats.dropped + layer.router.pending_count
