"""
Scenario Files

A Scenario is one cell of the experiment matrix: technology, speed,
geometry, protocol timing and gateway layout. Scenarios come from flat
key-value files (one scenario) or matrix files (`defaults.*` plus
`cell.<name>.*` keys).
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import aiofiles
import structlog

from . import kvfile
from .exceptions import OecSimError, ScenarioParseError, ScenarioValidationError
from .kvfile import KvValue
from .mobility import Point, RsuPlacement, Trajectory, km_per_hour_to_mps
from .radio import (
    WIZE_DATA_RATES,
    LatencyModelParams,
    LinkModelParams,
    ProfileBundle,
    Technology,
    load_profile,
    profile_filename,
)

logger = structlog.get_logger()

FIELD_TRIAL_SPEEDS = (30.0, 50.0, 70.0)

LINK_OVERRIDES = (
    "link.path_loss_exponent", "link.reference_loss_db", "link.shadowing_sigma",
    "link.motion_loss_db_per_m", "link.coherence_distance",
)
LATENCY_OVERRIDES = ("latency.fixed_overhead", "latency.rendezvous_mean", "latency.rendezvous_jitter")

SCENARIO_KEYS = {
    "name", "technology", "data_rate", "speed",
    "geometry.point_a", "geometry.point_b", "geometry.rsu", "geometry.rsu_offset",
    "beacon_period", "frame_bytes", "seed", "runs", "drain_time",
    "disruption_windows",
    "gateways", "gateway.range", "gateway.sync_period", "gateway.record_transfer_time",
    "replication_factor", "message_ttl",
    "mesh.rsu_group", "mesh.mobile_group",
    *LINK_OVERRIDES, *LATENCY_OVERRIDES,
}


@dataclass(frozen=True)
class Scenario:
    """
    One validated experiment cell.

    Attributes:
        name: Scenario id used in every output row
        technology: BLE5 or WIZE
        data_rate: bits/second, Wize only (None for BLE)
        speed: km/h
        point_a, point_b: Route ends; the vehicle drives A -> B -> A
        rsu: Roadside unit position
        rsu_offset: Lateral offset used when the RSU position was derived
        beacon_period: Seconds between beacons
        frame_bytes: Beacon frame size
        seed: Base seed; repetition r runs with seed + r
        runs: Repetitions of this cell
        disruption_windows: Intervals in which every frame is lost
        gateways: Gateway positions (empty = no gateway layer)
        overrides: Per-scenario link/latency profile values
    """

    name: str
    technology: Technology
    speed: float
    data_rate: Optional[int] = None
    point_a: Point = Point(0.0, 0.0)
    point_b: Point = Point(1000.0, 0.0)
    rsu: Optional[Point] = None
    rsu_offset: float = 10.0
    beacon_period: float = 1.0
    frame_bytes: int = 108
    seed: int = 1
    runs: int = 1
    drain_time: float = 5.0
    disruption_windows: Tuple[Tuple[float, float], ...] = ()
    gateways: Optional[Tuple[Point, ...]] = None
    gateway_range: float = 100.0
    sync_period: float = 1.0
    record_transfer_time: float = 0.01
    replication_factor: int = 2
    message_ttl: float = 300.0
    rsu_group: str = "oec-mesh"
    mobile_group: str = "oec-mesh"
    overrides: Tuple[Tuple[str, float], ...] = field(default=())

    def __post_init__(self):
        # resolve derived defaults so equality compares concrete values
        if self.rsu is None:
            placement = RsuPlacement.beside_route(self.point_a, self.point_b, 0.5, self.rsu_offset)
            object.__setattr__(self, "rsu", placement.position)
        if self.gateways is None:
            object.__setattr__(self, "gateways", (self.point_a,))

    @property
    def scenario_id(self) -> str:
        return self.name

    @property
    def speed_mps(self) -> float:
        return km_per_hour_to_mps(self.speed)

    def trajectory(self) -> Trajectory:
        return Trajectory(self.point_a, self.point_b, self.speed_mps)

    def placement(self) -> RsuPlacement:
        return RsuPlacement(self.rsu, self.rsu_offset)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def radio_bundle(self, profile_dir: str | Path) -> ProfileBundle:
        """Shipped profile for this technology/rate with scenario overrides applied."""
        bundle = load_profile(Path(profile_dir) / profile_filename(self.technology, self.data_rate))
        values = dict(self.overrides)
        link_changes = {key.split(".", 1)[1]: values[key] for key in LINK_OVERRIDES if key in values}
        latency_changes = {key.split(".", 1)[1]: values[key] for key in LATENCY_OVERRIDES if key in values}
        link: LinkModelParams = replace(bundle.link, disruption_windows=self.disruption_windows, **link_changes)
        latency: LatencyModelParams = replace(bundle.latency, **latency_changes)
        return ProfileBundle(bundle.profile, link, latency)


def _build(entries: Dict[str, KvValue], source: str, default_name: str) -> Scenario:
    kvfile.reject_unknown(entries, SCENARIO_KEYS, source)

    def get(key: str) -> Optional[str]:
        return entries[key].raw if key in entries else None

    def require(key: str) -> str:
        value = get(key)
        if value is None:
            raise ScenarioValidationError(key, "missing", source)
        return value

    def number(key: str, default: float) -> float:
        value = get(key)
        return default if value is None else kvfile.as_float(key, value, source)

    def integer(key: str, default: int) -> int:
        value = get(key)
        return default if value is None else kvfile.as_int(key, value, source)

    def point(key: str) -> Optional[Point]:
        value = get(key)
        return None if value is None else Point(*kvfile.as_pair(key, value, source))

    raw_tech = require("technology")
    try:
        technology = Technology(raw_tech.upper())
    except ValueError:
        raise ScenarioValidationError("technology", f"expected BLE5 or WIZE, got {raw_tech!r}", source) from None

    data_rate = None
    if get("data_rate") is not None:
        data_rate = kvfile.as_int("data_rate", get("data_rate"), source)
    if technology is Technology.WIZE and data_rate not in WIZE_DATA_RATES:
        raise ScenarioValidationError("data_rate", f"Wize needs data_rate in {WIZE_DATA_RATES}, got {data_rate}", source)
    if technology is Technology.BLE5 and data_rate is not None:
        raise ScenarioValidationError("data_rate", "only Wize scenarios select a data rate", source)

    speed = kvfile.as_float("speed", require("speed"), source)
    if not speed > 0:
        raise ScenarioValidationError("speed", f"must be positive, got {speed}", source)

    point_a = point("geometry.point_a") or Point(0.0, 0.0)
    point_b = point("geometry.point_b") or Point(1000.0, 0.0)
    if point_a == point_b:
        raise ScenarioValidationError("geometry.point_b", "must differ from geometry.point_a", source)

    checks = {
        "beacon_period": (number("beacon_period", 1.0), lambda v: v > 0, "must be positive"),
        "frame_bytes": (integer("frame_bytes", 108), lambda v: v > 0, "must be positive"),
        "seed": (integer("seed", 1), lambda v: v >= 0, "must be >= 0"),
        "runs": (integer("runs", 1), lambda v: v >= 1, "must be >= 1"),
        "drain_time": (number("drain_time", 5.0), lambda v: v >= 0, "must be >= 0"),
        "geometry.rsu_offset": (number("geometry.rsu_offset", 10.0), lambda v: v >= 0, "must be >= 0"),
        "gateway.range": (number("gateway.range", 100.0), lambda v: v > 0, "must be positive"),
        "gateway.sync_period": (number("gateway.sync_period", 1.0), lambda v: v > 0, "must be positive"),
        "gateway.record_transfer_time": (number("gateway.record_transfer_time", 0.01), lambda v: v >= 0, "must be >= 0"),
        "replication_factor": (integer("replication_factor", 2), lambda v: v >= 1, "must be >= 1"),
        "message_ttl": (number("message_ttl", 300.0), lambda v: v > 0, "must be positive"),
    }
    values = {}
    for key, (value, ok, message) in checks.items():
        if not ok(value):
            raise ScenarioValidationError(key, f"{message}, got {value}", source)
        values[key] = value

    gateways = None
    if get("gateways") is not None:
        gateways = tuple(Point(x, y) for x, y in kvfile.as_pair_list("gateways", get("gateways"), source))

    overrides = tuple(
        (key, kvfile.as_float(key, entries[key].raw, source))
        for key in (*LINK_OVERRIDES, *LATENCY_OVERRIDES)
        if key in entries
    )

    try:
        return Scenario(
            name=get("name") or default_name,
            technology=technology,
            speed=speed,
            data_rate=data_rate,
            point_a=point_a,
            point_b=point_b,
            rsu=point("geometry.rsu"),
            rsu_offset=values["geometry.rsu_offset"],
            beacon_period=values["beacon_period"],
            frame_bytes=values["frame_bytes"],
            seed=values["seed"],
            runs=values["runs"],
            drain_time=values["drain_time"],
            disruption_windows=tuple(kvfile.as_windows("disruption_windows", get("disruption_windows") or "", source)),
            gateways=gateways,
            gateway_range=values["gateway.range"],
            sync_period=values["gateway.sync_period"],
            record_transfer_time=values["gateway.record_transfer_time"],
            replication_factor=values["replication_factor"],
            message_ttl=values["message_ttl"],
            rsu_group=get("mesh.rsu_group") or "oec-mesh",
            mobile_group=get("mesh.mobile_group") or "oec-mesh",
            overrides=overrides,
        )
    except OecSimError as e:
        if isinstance(e, ScenarioValidationError):
            raise
        raise ScenarioValidationError("geometry", str(e), source) from e


def parse_scenario(text: str, source: str = "<string>", default_name: str = "scenario") -> Scenario:
    return _build(kvfile.parse_kv_text(text, source), source, default_name)


def load_scenario(path: str | Path) -> Scenario:
    """
    Load and validate one scenario file.

    Args:
        path: Key-value scenario file

    Returns:
        Scenario with every default applied

    Raises:
        ScenarioParseError: Malformed line, duplicate or unknown key (with line number)
        ScenarioValidationError: Invariant violation (with field name)
    """
    path = Path(path)
    scenario = _build(kvfile.read_kv_file(path), str(path), path.stem)
    logger.info("Scenario loaded", path=str(path), scenario_id=scenario.scenario_id)
    return scenario


def load_matrix(path: str | Path) -> List[Scenario]:
    """
    Expand a matrix file into scenarios, one per `cell.<name>` prefix.

    Every cell starts from the `defaults.*` keys; its own keys win.

    Example:
        defaults.speed = 30
        cell.ble_30.technology = BLE5
        cell.wize24_30.technology = WIZE
        cell.wize24_30.data_rate = 2400
    """
    path = Path(path)
    source = str(path)
    entries = kvfile.read_kv_file(path)

    defaults: Dict[str, KvValue] = {}
    cells: Dict[str, Dict[str, KvValue]] = {}
    for key, value in entries.items():
        if key.startswith("defaults."):
            defaults[key[len("defaults."):]] = value
        elif key.startswith("cell."):
            parts = key.split(".", 2)
            if len(parts) != 3 or not parts[1]:
                raise ScenarioParseError(source, value.line, f"expected 'cell.<name>.<key>', got {key!r}")
            cells.setdefault(parts[1], {})[parts[2]] = value
        else:
            raise ScenarioParseError(source, value.line, f"matrix keys start with 'defaults.' or 'cell.', got {key!r}")

    if not cells:
        raise ScenarioValidationError("cell", "matrix defines no cells", source)

    scenarios = [_build({**defaults, **own}, source, name) for name, own in cells.items()]
    names = [scenario.name for scenario in scenarios]
    if len(set(names)) != len(names):
        raise ScenarioValidationError("name", "scenario names must be unique within a matrix", source)

    logger.info("Matrix loaded", path=source, cells=len(scenarios))
    return scenarios


def validate_paper_cell(scenario: Scenario) -> None:
    """Field-trial cells run at 30, 50 or 70 km/h only."""
    if scenario.speed not in FIELD_TRIAL_SPEEDS:
        raise ScenarioValidationError("speed", f"field-trial speeds are {FIELD_TRIAL_SPEEDS}, got {scenario.speed}")


def dump_scenario(scenario: Scenario) -> str:
    """Serialize to the key-value format; load(dump(s)) == s."""
    f = kvfile.format_float
    lines = [
        f"name = {scenario.name}",
        f"technology = {scenario.technology.value}",
    ]
    if scenario.data_rate is not None:
        lines.append(f"data_rate = {scenario.data_rate}")
    lines += [
        f"speed = {f(scenario.speed)}",
        f"geometry.point_a = {kvfile.format_pair((scenario.point_a.x, scenario.point_a.y))}",
        f"geometry.point_b = {kvfile.format_pair((scenario.point_b.x, scenario.point_b.y))}",
        f"geometry.rsu = {kvfile.format_pair((scenario.rsu.x, scenario.rsu.y))}",
        f"geometry.rsu_offset = {f(scenario.rsu_offset)}",
        f"beacon_period = {f(scenario.beacon_period)}",
        f"frame_bytes = {scenario.frame_bytes}",
        f"seed = {scenario.seed}",
        f"runs = {scenario.runs}",
        f"drain_time = {f(scenario.drain_time)}",
        f"disruption_windows = {kvfile.format_windows(scenario.disruption_windows)}",
        "gateways = " + "; ".join(kvfile.format_pair((p.x, p.y)) for p in scenario.gateways),
        f"gateway.range = {f(scenario.gateway_range)}",
        f"gateway.sync_period = {f(scenario.sync_period)}",
        f"gateway.record_transfer_time = {f(scenario.record_transfer_time)}",
        f"replication_factor = {scenario.replication_factor}",
        f"message_ttl = {f(scenario.message_ttl)}",
        f"mesh.rsu_group = {scenario.rsu_group}",
        f"mesh.mobile_group = {scenario.mobile_group}",
    ]
    lines += [f"{key} = {f(value)}" for key, value in scenario.overrides]
    return "\n".join(lines) + "\n"


async def save_scenario(scenario: Scenario, path: str | Path) -> None:
    """Write a scenario file."""
    async with aiofiles.open(path, "w") as f:
        await f.write(dump_scenario(scenario))

    logger.info("Scenario saved", path=str(path), scenario_id=scenario.scenario_id)
