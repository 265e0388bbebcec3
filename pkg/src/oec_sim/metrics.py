"""
Run Metrics

Per-run counters and latency statistics, the cross-run comparison table,
and the CSV layouts the runner exports.
"""

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .beacon_protocol import BeaconRow
from .exceptions import DuplicateRunError, NoDataError


@dataclass(frozen=True)
class LatencyStats:
    mean: float
    min: float
    max: float
    count: int
    p50: float
    p95: float


@dataclass
class RunMetrics:
    """
    Outcome of one (scenario, repetition) run.

    Invariants: loss_rate = 100·(sent − received)/sent when sent > 0;
    received == len(latencies).
    """

    scenario_id: str
    sent: int
    received: int
    radio_lost: int
    filtered: int
    loss_rate: Optional[float]
    latencies: List[float]
    mean_latency: Optional[float]
    min_latency: Optional[float]
    max_latency: Optional[float]
    synced: int
    dht_drops: int
    repetition: int = 0
    technology: str = ""
    data_rate: int = 0
    speed_kmh: float = 0.0
    p50_latency: Optional[float] = None
    p95_latency: Optional[float] = None
    beacons: List[BeaconRow] = field(default_factory=list, repr=False)

    @property
    def cell(self) -> Tuple[str, int, float]:
        return (self.technology, self.data_rate, self.speed_kmh)


def packet_loss_rate(sent: int, received: int) -> float:
    """
    Percentage of sent beacons that were not usefully received.

    Raises:
        NoDataError: If nothing was sent
        ValueError: If received exceeds sent
    """
    if sent == 0:
        raise NoDataError("loss rate undefined: no beacons sent")
    if received > sent or received < 0:
        raise ValueError(f"received ({received}) must lie in [0, sent={sent}]")
    return 100.0 * (sent - received) / sent


def latency_stats(latencies: Iterable[float]) -> LatencyStats:
    """
    Mean, extrema and percentiles of a latency sample.

    The mean uses exactly rounded summation, so permuting the sample never
    changes any statistic.

    Raises:
        NoDataError: On an empty sample
    """
    samples = np.asarray(list(latencies), dtype=float)
    if samples.size == 0:
        raise NoDataError("latency statistics undefined: no samples")
    return LatencyStats(
        mean=math.fsum(samples.tolist()) / samples.size,
        min=float(samples.min()),
        max=float(samples.max()),
        count=int(samples.size),
        p50=float(np.percentile(samples, 50)),
        p95=float(np.percentile(samples, 95)),
    )


def build_run_metrics(
    scenario_id: str,
    repetition: int,
    technology: str,
    data_rate: int,
    speed_kmh: float,
    beacons: Sequence[BeaconRow],
    sent: int,
    received: int,
    radio_lost: int,
    filtered: int,
    synced: int,
    dht_drops: int,
) -> RunMetrics:
    """Assemble RunMetrics; statistics over empty samples stay None."""
    latencies = [row.latency for row in beacons if row.latency is not None]
    loss = packet_loss_rate(sent, received) if sent else None
    stats = latency_stats(latencies) if latencies else None
    return RunMetrics(
        scenario_id=scenario_id,
        sent=sent,
        received=received,
        radio_lost=radio_lost,
        filtered=filtered,
        loss_rate=loss,
        latencies=latencies,
        mean_latency=stats.mean if stats else None,
        min_latency=stats.min if stats else None,
        max_latency=stats.max if stats else None,
        synced=synced,
        dht_drops=dht_drops,
        repetition=repetition,
        technology=technology,
        data_rate=data_rate,
        speed_kmh=speed_kmh,
        p50_latency=stats.p50 if stats else None,
        p95_latency=stats.p95 if stats else None,
        beacons=list(beacons),
    )


# Comparison

@dataclass(frozen=True)
class ComparisonRow:
    technology: str
    data_rate: int
    speed_kmh: float
    runs: int
    mean_loss: Optional[float]
    mean_latency: Optional[float]
    samples: int


@dataclass
class ComparisonTable:
    rows: List[ComparisonRow]
    ratios: Dict[str, float] = field(default_factory=dict)
    average_loss: Dict[str, float] = field(default_factory=dict)

    def row(self, technology: str, data_rate: int, speed_kmh: float) -> ComparisonRow:
        for candidate in self.rows:
            if (candidate.technology, candidate.data_rate, candidate.speed_kmh) == (technology, data_rate, speed_kmh):
                return candidate
        raise KeyError((technology, data_rate, speed_kmh))


def _pooled_mean(runs: Iterable[RunMetrics]) -> Optional[float]:
    samples = [latency for run in runs for latency in run.latencies]
    return math.fsum(samples) / len(samples) if samples else None


def compare_runs(runs: Sequence[RunMetrics]) -> ComparisonTable:
    """
    Aggregate runs into one row per (technology, data_rate, speed) cell.

    Repetitions of a cell are averaged for loss and pooled for latency.
    Ratios compare pooled BLE latency against Wize latency: overall, per
    data rate, and per speed against the 6.4 kbps configuration.

    Args:
        runs: At least two RunMetrics

    Returns:
        ComparisonTable sorted by technology, data rate, speed

    Raises:
        NoDataError: With fewer than two runs
        DuplicateRunError: If a (scenario_id, repetition) pair repeats
    """
    if len(runs) < 2:
        raise NoDataError(f"comparison needs at least 2 runs, got {len(runs)}")

    seen = set()
    for run in runs:
        key = (run.scenario_id, run.repetition)
        if key in seen:
            raise DuplicateRunError(f"duplicate run {run.scenario_id}#{run.repetition}")
        seen.add(key)

    cells: Dict[Tuple[str, int, float], List[RunMetrics]] = defaultdict(list)
    for run in runs:
        cells[run.cell].append(run)

    rows = []
    for cell in sorted(cells):
        members = cells[cell]
        losses = [run.loss_rate for run in members if run.loss_rate is not None]
        rows.append(ComparisonRow(
            technology=cell[0],
            data_rate=cell[1],
            speed_kmh=cell[2],
            runs=len(members),
            mean_loss=math.fsum(losses) / len(losses) if losses else None,
            mean_latency=_pooled_mean(members),
            samples=sum(len(run.latencies) for run in members),
        ))

    table = ComparisonTable(rows=rows)
    ble = [run for run in runs if run.technology == "BLE5"]
    wize = [run for run in runs if run.technology == "WIZE"]
    ble_mean = _pooled_mean(ble)
    wize_mean = _pooled_mean(wize)
    if ble_mean is not None and wize_mean:
        table.ratios["ble/wize"] = ble_mean / wize_mean
    for rate in sorted({run.data_rate for run in wize}):
        rate_mean = _pooled_mean(run for run in wize if run.data_rate == rate)
        if ble_mean is not None and rate_mean:
            table.ratios[f"ble/wize_{rate}"] = ble_mean / rate_mean

    for row in rows:
        if row.technology != "BLE5" or row.mean_latency is None:
            continue
        for other in rows:
            if other.technology == "WIZE" and other.speed_kmh == row.speed_kmh and other.mean_latency:
                table.ratios[f"ble/wize_{other.data_rate}@{row.speed_kmh:g}"] = row.mean_latency / other.mean_latency

    groups: Dict[str, List[float]] = defaultdict(list)
    for row in rows:
        if row.mean_loss is None:
            continue
        label = "BLE5" if row.technology == "BLE5" else f"WIZE_{row.data_rate}"
        groups[label].append(row.mean_loss)
    table.average_loss = {label: math.fsum(values) / len(values) for label, values in sorted(groups.items())}
    return table


# CSV export

BEACON_COLUMNS = ["scenario_id", "seq", "tx_time_s", "outcome", "latency_s", "repetition"]
SUMMARY_COLUMNS = [
    "scenario_id", "sent", "received", "radio_lost", "filtered", "loss_rate",
    "latency_count", "mean_latency_s", "min_latency_s", "max_latency_s", "synced", "dht_drops",
    "repetition", "technology", "data_rate", "speed_kmh", "p50_latency_s", "p95_latency_s",
]


def fmt(value: Optional[float]) -> str:
    """Decimal point, 6 fractional digits; empty when there is no value."""
    return "" if value is None else f"{value:.6f}"


def beacon_rows(run: RunMetrics) -> List[List[str]]:
    return [
        [
            run.scenario_id,
            str(row.seq),
            fmt(row.tx_time),
            row.outcome.value if row.outcome else "",
            fmt(row.latency),
            str(run.repetition),
        ]
        for row in run.beacons
    ]


def summary_row(run: RunMetrics) -> List[str]:
    return [
        run.scenario_id,
        str(run.sent),
        str(run.received),
        str(run.radio_lost),
        str(run.filtered),
        fmt(run.loss_rate),
        str(len(run.latencies)),
        fmt(run.mean_latency),
        fmt(run.min_latency),
        fmt(run.max_latency),
        str(run.synced),
        str(run.dht_drops),
        str(run.repetition),
        run.technology,
        str(run.data_rate),
        fmt(run.speed_kmh),
        fmt(run.p50_latency),
        fmt(run.p95_latency),
    ]


def render_csv(header: List[str], rows: Iterable[List[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()
