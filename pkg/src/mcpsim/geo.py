"""Geographic primitives: waypoints, great-circle distance, polyline motion.

Coordinates are decimal degrees on a sphere of radius EARTH_RADIUS_M; all
distances are meters. Everything here is pure and value-typed, so the
functions are safe to call from any number of concurrent contexts.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

EARTH_RADIUS_M = 6_371_000.0  # mean radius; reproduces reference distances to <0.1%


@dataclass(frozen=True)
class WayPoint:
    """A latitude/longitude position in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat!r} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon!r} outside [-180, 180]")


def great_circle_distance(p: WayPoint, q: WayPoint) -> float:
    """Spherical law-of-cosines distance between two waypoints, in meters.

    The arccos argument is clamped to [-1, 1] so rounding near coincident or
    antipodal points cannot raise a domain error; |dlon| keeps the result
    exactly symmetric in its arguments. Coincident points short-circuit to
    exactly zero, below the ~0.1 m noise floor arccos has near 1.
    """
    if p.lat == q.lat and p.lon == q.lon:
        return 0.0
    lat_p = math.radians(p.lat)
    lat_q = math.radians(q.lat)
    dlon = math.radians(abs(q.lon - p.lon))
    c = math.sin(lat_p) * math.sin(lat_q) + math.cos(lat_p) * math.cos(lat_q) * math.cos(dlon)
    return EARTH_RADIUS_M * math.acos(min(1.0, max(-1.0, c)))


def interpolate(p: WayPoint, q: WayPoint, f: float) -> WayPoint:
    """Point a fraction ``f`` along the straight lat/lon line from p to q.

    Linear interpolation in coordinate space, which is accurate at the
    sub-kilometer path scales this simulator works with. The endpoints are
    returned exactly for f = 0 and f = 1.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"fraction {f!r} outside [0, 1]")
    if f == 0.0:
        return p
    if f == 1.0:
        return q
    return WayPoint(p.lat + (q.lat - p.lat) * f, p.lon + (q.lon - p.lon) * f)


def offset_point(anchor: WayPoint, east_m: float, north_m: float) -> WayPoint:
    """Waypoint displaced east/north in meters via a local flat-earth step.

    Valid for the sub-kilometer squares (fields, grids) built around an
    anchor point.
    """
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(anchor.lat))))
    return WayPoint(anchor.lat + dlat, anchor.lon + dlon)


class Polyline:
    """A chain of >= 2 distinct waypoints with cached segment lengths.

    Offsets are meters of great-circle arc length accumulated along the
    chain; ``point_at`` maps an offset back onto the polyline.
    """

    __slots__ = ("vertices", "seg_lengths", "cum_lengths", "length")

    def __init__(self, vertices: Sequence[WayPoint]):
        vertices = tuple(vertices)
        if len(vertices) < 2:
            raise ValueError("path needs at least 2 vertices")
        seg = [great_circle_distance(a, b) for a, b in zip(vertices, vertices[1:])]
        if any(s == 0.0 for s in seg):
            raise ValueError("degenerate path: consecutive vertices coincide")
        cum = [0.0]
        for s in seg:
            cum.append(cum[-1] + s)
        self.vertices = vertices
        self.seg_lengths = seg
        self.cum_lengths = cum
        self.length = cum[-1]

    def point_at(self, offset_m: float) -> WayPoint:
        """Position on the polyline at the given arc-length offset (clamped)."""
        if offset_m <= 0.0:
            return self.vertices[0]
        if offset_m >= self.length:
            return self.vertices[-1]
        if len(self.seg_lengths) == 1:
            return interpolate(self.vertices[0], self.vertices[1], offset_m / self.length)
        i = bisect_right(self.cum_lengths, offset_m) - 1
        i = min(i, len(self.seg_lengths) - 1)
        f = (offset_m - self.cum_lengths[i]) / self.seg_lengths[i]
        return interpolate(self.vertices[i], self.vertices[i + 1], f)


def advance_along(
    path_vertices: Sequence[WayPoint] | Polyline,
    offset_m: float,
    step_m: float,
) -> tuple[WayPoint, float, bool]:
    """Advance ``step_m`` meters along a polyline from ``offset_m``.

    Returns (position, new_offset, reached_end); the new offset is clamped
    to the total path length and reached_end is True exactly at the clamp.
    """
    if offset_m < 0.0:
        raise ValueError(f"offset {offset_m!r} must be >= 0")
    if step_m < 0.0:
        raise ValueError(f"step {step_m!r} must be >= 0")
    line = path_vertices if isinstance(path_vertices, Polyline) else Polyline(path_vertices)
    new_offset = min(offset_m + step_m, line.length)
    return line.point_at(new_offset), new_offset, new_offset >= line.length
