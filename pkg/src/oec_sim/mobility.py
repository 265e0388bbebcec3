"""
Vehicle Mobility

Planar positions of the roadside unit and the vehicle on the A -> B -> A
route, and the radio-contact windows between them. Pure functions over
frozen inputs.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple, Union

from .exceptions import MobilityError

# Slack for float round-off at leg and window boundaries (seconds / meters)
EPSILON = 1e-9


def km_per_hour_to_mps(kmh: float) -> float:
    """Exact km/h -> m/s conversion."""
    return kmh / 3.6


@dataclass(frozen=True)
class Point:
    """Planar coordinates in meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise MobilityError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def __str__(self) -> str:
        return f"({self.x}, {self.y})"


def distance(p: Point, q: Point) -> float:
    """Euclidean distance in meters."""
    return math.hypot(p.x - q.x, p.y - q.y)


@dataclass(frozen=True)
class Trajectory:
    """
    Constant-speed A -> B -> A traversal.

    Example:
        >>> traj = Trajectory(Point(0, 0), Point(1000, 0), km_per_hour_to_mps(30))
        >>> traj.duration
        240.0
    """

    point_a: Point
    point_b: Point
    speed: float
    depart_at: float = 0.0

    def __post_init__(self):
        if not self.speed > 0:
            raise MobilityError(f"speed must be positive, got {self.speed}")
        if self.leg_length == 0:
            raise MobilityError("point_a and point_b must differ")

    @property
    def leg_length(self) -> float:
        return distance(self.point_a, self.point_b)

    @property
    def leg_duration(self) -> float:
        return self.leg_length / self.speed

    @property
    def duration(self) -> float:
        """Total traversal time, 2·|AB|/speed."""
        return 2.0 * self.leg_length / self.speed

    @property
    def arrive_at(self) -> float:
        return self.depart_at + self.duration

    @property
    def final_position(self) -> Point:
        """The vehicle stays parked at A once the traversal ends."""
        return self.point_a


@dataclass(frozen=True)
class RsuPlacement:
    """
    Fixed node beside the road.

    Attributes:
        position: Actual node coordinates
        lateral_offset: Distance from the road axis in meters
    """

    position: Point
    lateral_offset: float = 0.0

    def __post_init__(self):
        if self.lateral_offset < 0:
            raise MobilityError(f"lateral_offset must be >= 0, got {self.lateral_offset}")

    @classmethod
    def beside_route(
        cls,
        point_a: Point,
        point_b: Point,
        fraction: float = 0.5,
        lateral_offset: float = 10.0,
    ) -> "RsuPlacement":
        """
        Place a node at a fraction of AB, shifted left of the A -> B direction.

        Args:
            point_a: Route start
            point_b: Route turnaround
            fraction: 0 = at A, 1 = at B
            lateral_offset: Perpendicular shift in meters

        Returns:
            RsuPlacement with computed position
        """
        length = distance(point_a, point_b)
        ux = (point_b.x - point_a.x) / length
        uy = (point_b.y - point_a.y) / length
        base_x = point_a.x + ux * length * fraction
        base_y = point_a.y + uy * length * fraction
        return cls(Point(base_x - uy * lateral_offset, base_y + ux * lateral_offset), lateral_offset)


def traversal_duration(traj: Trajectory) -> float:
    return traj.duration


def position_at(traj: Trajectory, t: float) -> Point:
    """
    Vehicle position at virtual time t.

    Raises:
        MobilityError: If t lies outside [depart_at, depart_at + duration]
    """
    elapsed = t - traj.depart_at
    if elapsed < -EPSILON or elapsed > traj.duration + EPSILON:
        raise MobilityError(
            f"t={t} outside traversal window [{traj.depart_at}, {traj.arrive_at}]"
        )
    elapsed = min(max(elapsed, 0.0), traj.duration)

    travelled = traj.speed * elapsed
    if travelled <= traj.leg_length:
        start, end, along = traj.point_a, traj.point_b, travelled
    else:
        start, end, along = traj.point_b, traj.point_a, travelled - traj.leg_length

    ratio = along / traj.leg_length
    return Point(start.x + (end.x - start.x) * ratio, start.y + (end.y - start.y) * ratio)


def _leg_interval(
    start: Point,
    end: Point,
    centre: Point,
    radius: float,
    t0: float,
    speed: float,
) -> Tuple[float, float] | None:
    """Sub-interval of one straight leg spent within radius of centre."""
    length = distance(start, end)
    ux, uy = (end.x - start.x) / length, (end.y - start.y) / length
    wx, wy = start.x - centre.x, start.y - centre.y

    # |w + u·s|^2 <= r^2  ->  s^2 + 2(w·u)s + |w|^2 - r^2 <= 0
    half_b = wx * ux + wy * uy
    c = wx * wx + wy * wy - radius * radius
    disc = half_b * half_b - c
    if disc < 0:
        return None

    root = math.sqrt(disc)
    s_in = max(-half_b - root, 0.0)
    s_out = min(-half_b + root, length)
    if s_out < s_in:
        return None
    return t0 + s_in / speed, t0 + s_out / speed


def contact_intervals(
    traj: Trajectory,
    rsu: Union[RsuPlacement, Point],
    range_m: float,
) -> List[Tuple[float, float]]:
    """
    Maximal time windows during which the vehicle is within range of a node.

    Args:
        traj: Vehicle trajectory
        rsu: Fixed node placement (or bare position)
        range_m: Radio range in meters (> 0)

    Returns:
        Sorted, disjoint [t_in, t_out] pairs; empty when never in range
    """
    if not range_m > 0:
        raise MobilityError(f"range must be positive, got {range_m}")
    centre = rsu.position if isinstance(rsu, RsuPlacement) else rsu

    raw = [
        _leg_interval(traj.point_a, traj.point_b, centre, range_m, traj.depart_at, traj.speed),
        _leg_interval(
            traj.point_b, traj.point_a, centre, range_m, traj.depart_at + traj.leg_duration, traj.speed
        ),
    ]

    merged: List[Tuple[float, float]] = []
    for window in raw:
        if window is None:
            continue
        if merged and window[0] <= merged[-1][1] + EPSILON:
            merged[-1] = (merged[-1][0], max(merged[-1][1], window[1]))
        else:
            merged.append(window)

    return [(t_in, t_out) for t_in, t_out in merged if t_out > t_in]


def in_contact(traj: Trajectory, rsu: Union[RsuPlacement, Point], range_m: float, t: float) -> bool:
    """Whether the vehicle (parked at A after arrival) is within range at t."""
    centre = rsu.position if isinstance(rsu, RsuPlacement) else rsu
    here = traj.final_position if t > traj.arrive_at else position_at(traj, max(t, traj.depart_at))
    return distance(here, centre) <= range_m
