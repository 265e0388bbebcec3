"""
OEC Smart Gateway Layer

Peer discovery, peer routing, store-carry-forward data routing and a
DHT shared by the gateways, all running over the simulated contact
graph. Every state change happens on a contact or timer; no component
reads another node's state directly.
"""

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Deque, Dict, Iterable, List, Optional, Set, Tuple

import structlog

from .beacon_protocol import IdentificationRecord, MobileNode, NodeId
from .exceptions import RoutingError

logger = structlog.get_logger()

CLOUD_ID = NodeId(0xC10D)
DEFAULT_TTL = 300.0
DEFAULT_REPLICATION = 2


class Layer(str, Enum):
    IOT = "IOT"
    GATEWAY = "GATEWAY"
    CLOUD = "CLOUD"


@dataclass
class PeerRecord:
    """What a node knows about one peer."""

    peer_id: NodeId
    addresses: List[str]
    layer: Layer
    last_seen: float


class RouteOutcome(str, Enum):
    DELIVERED_DIRECT = "delivered-direct"
    FORWARDED = "forwarded"
    STORED_PENDING = "stored-pending"
    DROPPED = "dropped"


@dataclass
class Message:
    """Data-routing unit carried between peers."""

    msg_id: int
    source: NodeId
    dest: NodeId
    payload: bytes
    created_at: float
    expires_at: float
    path: List[NodeId] = field(default_factory=list)
    delivered_at: Optional[float] = None


@dataclass
class RoutingTable:
    """
    Peer table, next-hop entries and the store-carry-forward queue of one node.

    Invariant: no entry routes a remote destination through the owner itself.
    """

    owner: NodeId
    layer: Layer = Layer.GATEWAY
    addresses: List[str] = field(default_factory=list)
    peers: Dict[NodeId, PeerRecord] = field(default_factory=dict)
    entries: Dict[NodeId, NodeId] = field(default_factory=dict)
    # every neighbour that advertised a route to the key
    via: Dict[NodeId, Set[NodeId]] = field(default_factory=dict)
    pending: Deque[Message] = field(default_factory=deque)
    capacity: int = 10_000

    def self_record(self, now: float) -> PeerRecord:
        return PeerRecord(self.owner, list(self.addresses), self.layer, now)

    def known(self) -> Set[NodeId]:
        return set(self.peers)

    def snapshot(self) -> List[PeerRecord]:
        """Peer list as shared during an exchange."""
        return [replace(record, addresses=list(record.addresses)) for record in self.peers.values()]


def discover_peers(
    local: RoutingTable,
    encountered_peer: PeerRecord,
    their_known: Iterable[PeerRecord],
    now: Optional[float] = None,
) -> int:
    """
    Merge a contacted peer's table into ours.

    The encountered peer becomes a direct route. Every peer it knows is
    reachable through it: the first advertiser stays the primary entry,
    later ones are kept as alternates.

    Args:
        local: Our routing table
        encountered_peer: The peer currently in contact
        their_known: Peers it knows about
        now: Contact time (defaults to the encountered record's last_seen)

    Returns:
        Number of previously unknown peers learned, the encountered one excluded
    """
    seen_at = encountered_peer.last_seen if now is None else now
    peer_id = encountered_peer.peer_id
    if peer_id != local.owner:
        _remember(local, replace(encountered_peer, last_seen=seen_at))
        local.entries[peer_id] = peer_id
        local.via.setdefault(peer_id, set()).add(peer_id)

    learned = 0
    for record in their_known:
        if record.peer_id in (local.owner, peer_id):
            continue
        if _remember(local, replace(record, addresses=list(record.addresses))):
            learned += 1
        local.entries.setdefault(record.peer_id, peer_id)
        local.via.setdefault(record.peer_id, set()).add(peer_id)
    return learned


def _remember(table: RoutingTable, record: PeerRecord) -> bool:
    """Insert or refresh a peer; True when it was unknown."""
    current = table.peers.get(record.peer_id)
    if current is None:
        table.peers[record.peer_id] = record
        return True
    current.last_seen = max(current.last_seen, record.last_seen)
    for address in record.addresses:
        if address not in current.addresses:
            current.addresses.append(address)
    return False


def exchange_peer_tables(a: RoutingTable, b: RoutingTable, now: float) -> Tuple[int, int]:
    """Symmetric discovery on one contact; both sides use pre-exchange snapshots."""
    a_view, b_view = a.snapshot(), b.snapshot()
    learned_a = discover_peers(a, b.self_record(now), b_view, now)
    learned_b = discover_peers(b, a.self_record(now), a_view, now)
    return learned_a, learned_b


def gossip_round(tables: Dict[NodeId, RoutingTable], edges: Iterable[Tuple[NodeId, NodeId]], now: float) -> int:
    """
    One synchronous exchange round: every edge exchanges the tables its
    endpoints had at the start of the round.

    Returns:
        Total peers learned in the round
    """
    views = {node: table.snapshot() for node, table in tables.items()}
    selves = {node: table.self_record(now) for node, table in tables.items()}
    learned = 0
    for a, b in edges:
        learned += discover_peers(tables[a], selves[b], views[b], now)
        learned += discover_peers(tables[b], selves[a], views[a], now)
    return learned


class ContactGraph:
    """
    Who can talk to whom at a given time.

    Static links model the gateway backbone; windowed links come from
    vehicle contact intervals. Partitioned nodes reach nobody.
    """

    def __init__(self):
        self._static: Set[frozenset] = set()
        self._windows: Dict[frozenset, List[Tuple[float, float]]] = {}
        self._partitioned: Set[NodeId] = set()
        self.nodes: Set[NodeId] = set()

    def add_link(self, a: NodeId, b: NodeId) -> None:
        self.nodes.update((a, b))
        self._static.add(frozenset((a, b)))

    def add_windows(self, a: NodeId, b: NodeId, windows: Iterable[Tuple[float, float]]) -> None:
        self.nodes.update((a, b))
        self._windows.setdefault(frozenset((a, b)), []).extend(windows)

    def partition(self, node: NodeId) -> None:
        self._partitioned.add(node)

    def heal(self, node: NodeId) -> None:
        self._partitioned.discard(node)

    def in_contact(self, a: NodeId, b: NodeId, now: float) -> bool:
        if a == b:
            return True
        if a in self._partitioned or b in self._partitioned:
            return False
        pair = frozenset((a, b))
        if pair in self._static:
            return True
        return any(start <= now <= end for start, end in self._windows.get(pair, ()))

    def neighbours(self, node: NodeId, now: float) -> List[NodeId]:
        return sorted(other for other in self.nodes if other != node and self.in_contact(node, other, now))

    def static_edges(self) -> List[Tuple[NodeId, NodeId]]:
        return sorted(tuple(sorted(pair)) for pair in self._static)


@dataclass
class RoutingStats:
    injected: int = 0
    delivered: int = 0
    dropped_ttl: int = 0
    dropped_capacity: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_ttl + self.dropped_capacity


DeliveryHandler = Callable[[Message, NodeId, float], None]


class DataRouter:
    """
    Peer routing plus store-carry-forward data routing.

    Example:
        >>> router = DataRouter(tables, contacts, default_ttl=60.0)
        >>> router.route_message(tables[mobile_id], gateway_id, b"record", now=10.0)
        <RouteOutcome.STORED_PENDING: 'stored-pending'>
        >>> router.on_contact(mobile_id, now=190.0)
    """

    def __init__(
        self,
        tables: Dict[NodeId, RoutingTable],
        contacts: ContactGraph,
        default_ttl: float = DEFAULT_TTL,
        on_deliver: Optional[DeliveryHandler] = None,
    ):
        self.tables = tables
        self.contacts = contacts
        self.default_ttl = default_ttl
        self.on_deliver = on_deliver
        self.stats = RoutingStats()
        self.dropped: List[Tuple[Message, float]] = []

    @property
    def next_msg_id(self) -> int:
        """Id the next injected message will get."""
        return self.stats.injected + 1

    @property
    def pending_count(self) -> int:
        return sum(len(table.pending) for table in self.tables.values())

    def route_message(
        self,
        table: RoutingTable,
        dest: NodeId,
        msg: bytes,
        now: float,
        ttl: Optional[float] = None,
    ) -> RouteOutcome:
        """
        Inject a new message at table.owner and route it.

        Args:
            table: Routing table of the originating node
            dest: Destination peer
            msg: Non-empty payload
            now: Injection time
            ttl: Seconds before the message is dropped (default_ttl if None)

        Returns:
            delivered-direct, forwarded, stored-pending, or dropped (no capacity)

        Raises:
            RoutingError: If msg is empty
        """
        return self._route(table, self._inject(table, dest, msg, now, ttl), now)

    def enqueue(
        self,
        table: RoutingTable,
        dest: NodeId,
        msg: bytes,
        now: float,
        ttl: Optional[float] = None,
    ) -> RouteOutcome:
        """Inject a message straight into the owner's pending queue (retried on contact)."""
        message = self._inject(table, dest, msg, now, ttl)
        return self._store(table, message)

    def _inject(self, table: RoutingTable, dest: NodeId, msg: bytes, now: float, ttl: Optional[float]) -> Message:
        if not msg:
            raise RoutingError("cannot route an empty message")
        lifetime = self.default_ttl if ttl is None else ttl
        message = Message(
            msg_id=self.next_msg_id,
            source=table.owner,
            dest=dest,
            payload=bytes(msg),
            created_at=now,
            expires_at=now + lifetime,
        )
        self.stats.injected += 1
        return message

    def _store(self, table: RoutingTable, message: Message) -> RouteOutcome:
        if len(table.pending) >= table.capacity:
            self.stats.dropped_capacity += 1
            self.dropped.append((message, message.created_at))
            logger.warning("Message dropped, no pending capacity", node=table.owner, msg_id=message.msg_id)
            return RouteOutcome.DROPPED
        table.pending.append(message)
        return RouteOutcome.STORED_PENDING

    def _route(self, table: RoutingTable, message: Message, now: float) -> RouteOutcome:
        if message.expires_at <= now:
            self._drop_expired(message)
            return RouteOutcome.DROPPED

        message.path.append(table.owner)
        if message.dest == table.owner or self.contacts.in_contact(table.owner, message.dest, now):
            self._deliver(message, now)
            return RouteOutcome.DELIVERED_DIRECT

        hop = self._usable_hop(table, message, now)
        if hop is not None:
            logger.debug("Message forwarded", msg_id=message.msg_id, via=hop, dest=message.dest)
            self._route(self.tables[hop], message, now)
            return RouteOutcome.FORWARDED

        return self._store(table, message)

    def _usable_hop(self, table: RoutingTable, message: Message, now: float) -> Optional[NodeId]:
        """
        Next hop in contact toward message.dest.

        The primary entry comes first, then alternates in id order; an
        alternate that is used becomes the new primary entry.
        """
        candidates = []
        primary = table.entries.get(message.dest)
        if primary is not None:
            candidates.append(primary)
        candidates.extend(sorted(table.via.get(message.dest, set()) - {primary}))
        # the cloud is the last resort, reachable only from gateways
        if table.layer is Layer.GATEWAY and CLOUD_ID in table.peers:
            candidates.append(CLOUD_ID)
        for hop in candidates:
            if hop == table.owner or hop in message.path or hop not in self.tables:
                continue
            if self.contacts.in_contact(table.owner, hop, now):
                if hop != primary and hop != CLOUD_ID:
                    table.entries[message.dest] = hop
                return hop
        return None

    def _deliver(self, message: Message, now: float) -> None:
        if message.path[-1] != message.dest:
            message.path.append(message.dest)
        message.delivered_at = now
        self.stats.delivered += 1
        if self.on_deliver is not None:
            self.on_deliver(message, message.dest, now)

    def _drop_expired(self, message: Message) -> None:
        self.stats.dropped_ttl += 1
        self.dropped.append((message, message.expires_at))
        logger.debug("Message expired", msg_id=message.msg_id, at=message.expires_at)

    def on_contact(self, node: NodeId, now: float, limit: Optional[int] = None) -> int:
        """
        Retry the node's pending messages (oldest first).

        Args:
            node: Node that just gained a contact
            now: Contact time
            limit: Max messages to attempt (transfer budget); None = all

        Returns:
            Messages that left the node's queue (delivered or forwarded)
        """
        table = self.tables[node]
        attempts = len(table.pending) if limit is None else min(limit, len(table.pending))
        moved = 0
        retry: Deque[Message] = deque()
        for _ in range(attempts):
            message = table.pending.popleft()
            message.path = []
            outcome = self._route_retry(table, message, now, retry)
            if outcome in (RouteOutcome.DELIVERED_DIRECT, RouteOutcome.FORWARDED):
                moved += 1
        # still undeliverable go back to the front, in order
        table.pending.extendleft(reversed(retry))
        return moved

    def _route_retry(self, table: RoutingTable, message: Message, now: float, retry: Deque[Message]) -> RouteOutcome:
        if message.expires_at <= now:
            self._drop_expired(message)
            return RouteOutcome.DROPPED
        message.path.append(table.owner)
        if message.dest == table.owner or self.contacts.in_contact(table.owner, message.dest, now):
            self._deliver(message, now)
            return RouteOutcome.DELIVERED_DIRECT
        hop = self._usable_hop(table, message, now)
        if hop is not None:
            self._route(self.tables[hop], message, now)
            return RouteOutcome.FORWARDED
        message.path.pop()
        retry.append(message)
        return RouteOutcome.STORED_PENDING

    def expire(self, now: float) -> int:
        """Drop every pending message whose TTL ran out by now."""
        expired = 0
        for table in self.tables.values():
            keep: Deque[Message] = deque()
            for message in table.pending:
                if message.expires_at <= now:
                    self._drop_expired(message)
                    expired += 1
                else:
                    keep.append(message)
            table.pending = keep
        return expired


# DHT

def xor_distance(a: int, b: int) -> int:
    return a ^ b


def record_key(beacon_id: int, seq: int) -> int:
    """64-bit key of an identification record."""
    digest = hashlib.blake2b(f"{beacon_id}:{seq}".encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class DhtEntry:
    """Aggregated view of one key across its holders."""

    key: int
    value: bytes
    stored_at: Set[NodeId]
    version: int


class DhtLookup(str, Enum):
    FOUND = "found"
    NOT_FOUND = "not-found"
    UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class DhtResult:
    status: DhtLookup
    value: Optional[bytes] = None
    version: Optional[int] = None


def latest(answers: Iterable[Tuple[int, bytes]]) -> Optional[Tuple[int, bytes]]:
    """Highest-version answer; order of answers never matters."""
    best = None
    for version, value in answers:
        if best is None or version > best[0]:
            best = (version, value)
    return best


class Dht:
    """
    Kademlia-style placement over the gateway ids.

    A key lives on the replication_factor reachable gateways closest to it
    under XOR distance; there is no iterative lookup refinement.
    """

    def __init__(self, gateway_ids: Iterable[NodeId], contacts: ContactGraph, replication_factor: int = DEFAULT_REPLICATION):
        if replication_factor < 1:
            raise ValueError(f"replication_factor must be >= 1, got {replication_factor}")
        self.gateway_ids = sorted(set(gateway_ids))
        self.contacts = contacts
        self.replication_factor = replication_factor
        self.stores: Dict[NodeId, Dict[int, Tuple[int, bytes]]] = {gid: {} for gid in self.gateway_ids}
        self.failed_puts = 0

    def closest(self, key: int, candidates: Iterable[NodeId]) -> List[NodeId]:
        ranked = sorted(candidates, key=lambda gid: (xor_distance(gid, key), gid))
        return ranked[: self.replication_factor]

    def reachable_from(self, via: Optional[NodeId], now: float) -> Set[NodeId]:
        """Gateways reachable over the backbone from `via` (all of them if None)."""
        if via is None:
            return {gid for gid in self.gateway_ids if self._alive(gid, now)}
        seen = {via}
        frontier = [via]
        while frontier:
            node = frontier.pop()
            for other in self.gateway_ids:
                if other not in seen and self.contacts.in_contact(node, other, now):
                    seen.add(other)
                    frontier.append(other)
        return seen

    def _alive(self, gid: NodeId, now: float) -> bool:
        others = [g for g in self.gateway_ids if g != gid]
        return not others or any(self.contacts.in_contact(gid, g, now) for g in others)

    def dht_put(self, key: int, value: bytes, now: float, via: Optional[NodeId] = None) -> Set[NodeId]:
        """
        Store a value on the closest reachable gateways.

        Args:
            key: 64-bit key
            value: Serialized payload
            now: Request time
            via: Gateway serving the request

        Returns:
            Holders written; empty when no gateway is reachable (caller keeps it pending)
        """
        reachable = self.reachable_from(via, now)
        if not reachable:
            self.failed_puts += 1
            logger.warning("DHT put with no reachable gateway", key=f"{key:016x}")
            return set()

        targets = self.closest(key, reachable)
        current = latest(self.stores[gid][key] for gid in targets if key in self.stores[gid])
        version = 1 if current is None else current[0] + 1
        for gid in targets:
            self.stores[gid][key] = (version, bytes(value))
        return set(targets)

    def dht_get(self, key: int, now: float, via: Optional[NodeId] = None) -> DhtResult:
        """
        Read a key from the closest reachable gateways.

        Returns:
            FOUND with the highest version; NOT_FOUND when every authoritative
            holder answered without it; UNREACHABLE when an authoritative
            holder could not be asked
        """
        reachable = self.reachable_from(via, now)
        queried = self.closest(key, reachable)
        best = latest(self.stores[gid][key] for gid in queried if key in self.stores[gid])
        if best is not None:
            return DhtResult(DhtLookup.FOUND, value=best[1], version=best[0])

        authoritative = self.closest(key, self.gateway_ids)
        if any(gid not in reachable for gid in authoritative):
            return DhtResult(DhtLookup.UNREACHABLE)
        return DhtResult(DhtLookup.NOT_FOUND)

    def entries(self) -> List[DhtEntry]:
        """One aggregated entry per key, sorted by key."""
        merged: Dict[int, DhtEntry] = {}
        for gid in self.gateway_ids:
            for key, (version, value) in self.stores[gid].items():
                entry = merged.get(key)
                if entry is None:
                    merged[key] = DhtEntry(key, value, {gid}, version)
                    continue
                entry.stored_at.add(gid)
                if version > entry.version:
                    entry.version, entry.value = version, value
        return [merged[key] for key in sorted(merged)]

    def dump_lines(self) -> List[str]:
        """Line-delimited JSON: key hex, version, holder ids, value size."""
        return [
            json.dumps({
                "key": f"{entry.key:016x}",
                "version": entry.version,
                "holders": sorted(entry.stored_at),
                "value_size": len(entry.value),
            })
            for entry in self.entries()
        ]


class GatewayLayer:
    """
    Gateways, the cloud stub and the mobile nodes that visit them.

    Example:
        >>> layer = GatewayLayer(contacts, replication_factor=2)
        >>> layer.add_gateway(NodeId(101))
        >>> layer.add_mobile(mobile, home_gateway=NodeId(101))
        >>> layer.bootstrap(now=0.0)
        >>> layer.sync_identifications(mobile, NodeId(101), now=190.0)
    """

    def __init__(
        self,
        contacts: ContactGraph,
        replication_factor: int = DEFAULT_REPLICATION,
        message_ttl: float = DEFAULT_TTL,
        record_transfer_time: float = 0.0,
    ):
        self.contacts = contacts
        self.replication_factor = replication_factor
        self.record_transfer_time = record_transfer_time
        self.tables: Dict[NodeId, RoutingTable] = {
            CLOUD_ID: RoutingTable(CLOUD_ID, Layer.CLOUD, ["sim://cloud"]),
        }
        self.gateway_ids: List[NodeId] = []
        self.router = DataRouter(self.tables, contacts, default_ttl=message_ttl, on_deliver=self._on_deliver)
        self.dht: Optional[Dht] = None
        self.home: Dict[NodeId, NodeId] = {}
        self.carried: Dict[NodeId, Dict[int, IdentificationRecord]] = {}
        self.mobiles: Dict[NodeId, MobileNode] = {}
        self.sync_times: Dict[Tuple[int, int], float] = {}

    def add_gateway(self, gateway_id: NodeId) -> None:
        self.tables[gateway_id] = RoutingTable(gateway_id, Layer.GATEWAY, [f"sim://gw-{gateway_id}"])
        for other in self.gateway_ids:
            self.contacts.add_link(gateway_id, other)
        self.contacts.add_link(gateway_id, CLOUD_ID)
        self.gateway_ids.append(gateway_id)
        self.dht = Dht(self.gateway_ids, self.contacts, self.replication_factor)

    def add_mobile(self, mobile: MobileNode, home_gateway: NodeId) -> None:
        table = RoutingTable(mobile.node_id, Layer.IOT, [f"sim://iot-{mobile.node_id}"])
        self.tables[mobile.node_id] = table
        self.home[mobile.node_id] = home_gateway
        self.carried[mobile.node_id] = {}
        self.mobiles[mobile.node_id] = mobile

    def bootstrap(self, now: float, max_rounds: int = 16) -> int:
        """Gossip over the static backbone until no table changes."""
        backbone = {node: self.tables[node] for node in [CLOUD_ID, *self.gateway_ids]}
        edges = self.contacts.static_edges()
        rounds = 0
        while rounds < max_rounds:
            rounds += 1
            if gossip_round(backbone, edges, now) == 0:
                break
        logger.info("Gateway backbone bootstrapped", gateways=len(self.gateway_ids), rounds=rounds)
        return rounds

    def carry(self, mobile: MobileNode, record: IdentificationRecord, now: float, route: bool = True) -> RouteOutcome:
        """
        Hand a fresh record to data routing toward the mobile's home gateway.

        With route=False the record only joins the pending queue and waits
        for the next contact flush.
        """
        payload = json.dumps(record.to_dict(), sort_keys=True).encode("utf-8")
        table = self.tables[mobile.node_id]
        self.carried[mobile.node_id][self.router.next_msg_id] = record
        if route:
            return self.router.route_message(table, self.home[mobile.node_id], payload, now)
        return self.router.enqueue(table, self.home[mobile.node_id], payload, now)

    def _on_deliver(self, message: Message, at: NodeId, now: float) -> None:
        if at not in self.gateway_ids:
            return
        record = self.carried.get(message.source, {}).pop(message.msg_id, None)
        if record is None:
            return
        stored = self.dht.dht_put(record_key(record.beacon_id, record.seq), message.payload, now, via=at)
        if stored:
            self.mobiles[message.source].mark_synced(record)
            self.sync_times[record.key] = now

    def sync_identifications(
        self,
        mobile: MobileNode,
        gateway_id: NodeId,
        now: float,
        deadline: Optional[float] = None,
    ) -> int:
        """
        Push the mobile's unsynced records into the DHT through a gateway in contact.

        Args:
            mobile: Visiting mobile node
            gateway_id: Gateway currently in contact
            now: Contact time
            deadline: When the contact ends (None = unbounded)

        Returns:
            Records newly synced by this call; 0 on a repeat contact
        """
        before = len(mobile.synced)
        exchange_peer_tables(self.tables[mobile.node_id], self.tables[gateway_id], now)

        # records whose message expired are carried again
        live = {message.msg_id for table in self.tables.values() for message in table.pending}
        carried = self.carried[mobile.node_id]
        for msg_id in [msg_id for msg_id in carried if msg_id not in live]:
            del carried[msg_id]

        carried_keys = {record.key for record in carried.values()}
        for record in mobile.unsynced():
            if record.key not in carried_keys:
                self.carry(mobile, record, now, route=False)

        limit = None
        if deadline is not None and self.record_transfer_time > 0:
            limit = max(int((deadline - now) / self.record_transfer_time), 0)
        self.router.on_contact(mobile.node_id, now, limit=limit)
        self.flush_relays(now)

        synced = len(mobile.synced) - before
        if synced:
            logger.debug("Records synced", mobile=mobile.node_id, gateway=gateway_id, count=synced, t=now)
        return synced

    def flush_relays(self, now: float) -> int:
        """
        Retry messages parked at gateways and the cloud over the backbone.

        A relay keeps a message when its destination was partitioned at
        forwarding time; it goes out once the destination is reachable again.

        Returns:
            Messages that left a relay queue
        """
        moved = 0
        for node in [*self.gateway_ids, CLOUD_ID]:
            if self.tables[node].pending:
                moved += self.router.on_contact(node, now)
        return moved

    @property
    def dht_drops(self) -> int:
        return self.router.stats.dropped + (self.dht.failed_puts if self.dht else 0)
