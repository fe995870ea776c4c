"""Map parsing, peer population spawning, and per-tick motion models.

Map files describe one construct per line (``#`` starts a comment):

    path_line := [index] mode (lat, lon) | (lat, lon) S <sellers> B|C <buyers> [|]
    mode      := U | I          (uniform or irregular pace)
    beacon    := BEACON (lat, lon)
    field     := FIELD (lat, lon) <side_m> <n_peers>

``B`` and ``C`` are both accepted as the buyer-count tag; an optional
leading line index and trailing bar are tolerated.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

from .geo import Polyline, WayPoint, offset_point


class MobilityMode(Enum):
    UNIFORM = "U"
    IRREGULAR = "I"


class MotionKind(Enum):
    ON_PATH = "on_path"
    RANDOM_WALK = "random_walk"
    STATIC = "static"


class Role(Enum):
    SELLER = "seller"
    BUYER = "buyer"
    BEACON = "beacon"


class MapParseError(ValueError):
    """A map file line that does not match the grammar."""


@dataclass(eq=False)
class PathSpec:
    """One directed path plus the population that enters it."""

    mode: MobilityMode
    vertices: tuple[WayPoint, ...]
    n_sellers: int = 0
    n_buyers: int = 0
    bidirectional: bool = False

    def __post_init__(self) -> None:
        self.vertices = tuple(self.vertices)
        if len(self.vertices) < 2:
            raise ValueError("path needs at least 2 vertices")
        for a, b in zip(self.vertices, self.vertices[1:]):
            if a == b:
                raise ValueError("degenerate path: consecutive vertices coincide")
        if self.n_sellers < 0 or self.n_buyers < 0:
            raise ValueError("peer counts must be non-negative")

    @cached_property
    def line(self) -> Polyline:
        return Polyline(self.vertices)

    def reversed(self) -> "PathSpec":
        return replace(self, vertices=tuple(reversed(self.vertices)))


@dataclass(frozen=True)
class FieldSpec:
    """A bounded square field anchored at its southwest corner."""

    side_m: float
    n_peers: int
    anchor: WayPoint

    def __post_init__(self) -> None:
        if self.side_m <= 0:
            raise ValueError("field side must be > 0")
        if self.n_peers < 1:
            raise ValueError("field needs at least one peer")


@dataclass
class MotionState:
    """Mutable per-peer motion bookkeeping.

    ``x_m``/``y_m`` are local field coordinates used only by RANDOM_WALK
    peers; path peers track ``path_offset_m`` instead.
    """

    kind: MotionKind
    path_offset_m: float = 0.0
    heading: float = 0.0
    speed_mps: float = 0.0
    pause_remaining_s: float = 0.0
    x_m: float = 0.0
    y_m: float = 0.0


@dataclass(frozen=True)
class IrregularParams:
    """Start-stop mobility: pause probability, pause length, speed draw.

    Defaults are configurable because no canonical values exist; speeds are
    drawn uniformly from (speed_floor * v_max, v_max].
    """

    p_pause: float = 0.1
    pause_min_s: int = 1
    pause_max_s: int = 30
    speed_floor: float = 0.2


@dataclass(frozen=True)
class PeerSpawn:
    """One spawned peer: identity, start position, motion and entry time."""

    peer_id: int
    position: WayPoint
    motion: MotionState
    role: Role
    enter_at_s: float


@dataclass
class MapData:
    paths: list[PathSpec] = field(default_factory=list)
    beacons: list[WayPoint] = field(default_factory=list)
    fields: list[FieldSpec] = field(default_factory=list)


_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_POINT_RE = re.compile(rf"\(\s*({_NUM})\s*,\s*({_NUM})\s*\)")
_INT_RE = re.compile(r"\d+")
_WS_RE = re.compile(r"\s*")


class _LineScanner:
    """Sequential token matcher with grammar-error reporting."""

    def __init__(self, line: str, lineno: int):
        self.line = line
        self.lineno = lineno
        self.pos = 0

    def fail(self, expected: str):
        rest = self.line[self.pos:].strip()
        token = rest.split()[0] if rest else "end of line"
        raise MapParseError(f"line {self.lineno}: expected {expected}, got {token!r}")

    def skip_ws(self) -> None:
        self.pos = _WS_RE.match(self.line, self.pos).end()

    def take(self, pattern: re.Pattern | str, expected: str) -> re.Match:
        self.skip_ws()
        if isinstance(pattern, str):
            if self.line.startswith(pattern, self.pos):
                self.pos += len(pattern)
                return None
            self.fail(expected)
        m = pattern.match(self.line, self.pos)
        if not m:
            self.fail(expected)
        self.pos = m.end()
        return m

    def try_take(self, pattern: re.Pattern) -> re.Match | None:
        self.skip_ws()
        m = pattern.match(self.line, self.pos)
        if m:
            self.pos = m.end()
        return m

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.line)

    def point(self) -> WayPoint:
        m = self.take(_POINT_RE, "a (lat, lon) point")
        try:
            return WayPoint(float(m.group(1)), float(m.group(2)))
        except ValueError as exc:
            raise MapParseError(f"line {self.lineno}: {exc}") from exc


def _parse_path_line(scanner: _LineScanner) -> PathSpec:
    scanner.try_take(_INT_RE)  # optional leading line index
    m = scanner.take(re.compile(r"[UI]"), "mobility mode 'U' or 'I'")
    mode = MobilityMode(m.group(0))
    start = scanner.point()
    scanner.take("|", "'|' between the path endpoints")
    end = scanner.point()
    scanner.take(re.compile(r"S\b"), "seller tag 'S'")
    n_sellers = int(scanner.take(_INT_RE, "a seller count").group(0))
    scanner.take(re.compile(r"[BC]\b"), "buyer tag 'B' or 'C'")
    n_buyers = int(scanner.take(_INT_RE, "a buyer count").group(0))
    scanner.try_take(re.compile(r"\|"))  # tolerated trailing bar
    if not scanner.at_end():
        scanner.fail("end of line")
    try:
        return PathSpec(mode, (start, end), n_sellers, n_buyers)
    except ValueError as exc:
        raise MapParseError(f"line {scanner.lineno}: {exc}") from exc


def parse_map(text: str) -> MapData:
    """Parse a map file into paths, beacons and fields.

    Blank lines and ``#`` comments are skipped; errors name the line number
    and the offending token.
    """
    if not text.strip():
        raise MapParseError("map file is empty")
    data = MapData()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        scanner = _LineScanner(line, lineno)
        if line.startswith("BEACON"):
            scanner.take("BEACON", "'BEACON'")
            data.beacons.append(scanner.point())
            if not scanner.at_end():
                scanner.fail("end of line")
        elif line.startswith("FIELD"):
            scanner.take("FIELD", "'FIELD'")
            anchor = scanner.point()
            side = float(scanner.take(re.compile(_NUM), "the field side in meters").group(0))
            n = int(scanner.take(_INT_RE, "the field peer count").group(0))
            if not scanner.at_end():
                scanner.fail("end of line")
            try:
                data.fields.append(FieldSpec(side, n, anchor))
            except ValueError as exc:
                raise MapParseError(f"line {lineno}: {exc}") from exc
        else:
            data.paths.append(_parse_path_line(scanner))
    if not data.paths and not data.beacons and not data.fields:
        raise MapParseError("map file defines no constructs")
    return data


def _seller_indices(seller_at: str | int, n_sellers: int, total: int) -> set[int]:
    if n_sellers == 0:
        return set()
    if seller_at == "first":
        start = 0
    elif seller_at == "middle":
        start = max(0, (total - n_sellers) // 2)
    elif seller_at == "last":
        start = total - n_sellers
    elif isinstance(seller_at, int):
        start = min(max(seller_at, 0), total - n_sellers)
    else:
        raise ValueError(f"unknown seller placement {seller_at!r}")
    return set(range(start, start + n_sellers))


def spawn_peers(
    spec: PathSpec,
    interval_m: float,
    speed_mps: float,
    *,
    seller_at: str | int = "first",
    start_id: int = 0,
) -> list[PeerSpawn]:
    """Spawn a path's population entering sequentially at the start vertex.

    Peer ``k`` (0-based) enters ``k * interval_m / speed_mps`` seconds after
    the path opens, which keeps successive peers ``interval_m`` apart once
    moving. The spawn is fully deterministic.
    """
    if interval_m <= 0:
        raise ValueError("interval must be > 0")
    if speed_mps <= 0:
        raise ValueError("speed must be > 0")
    total = spec.n_sellers + spec.n_buyers
    if total < 1:
        raise ValueError("path spawns no peers")
    sellers = _seller_indices(seller_at, spec.n_sellers, total)
    out = []
    for k in range(total):
        role = Role.SELLER if k in sellers else Role.BUYER
        motion = MotionState(kind=MotionKind.ON_PATH, speed_mps=speed_mps)
        out.append(
            PeerSpawn(
                peer_id=start_id + k,
                position=spec.vertices[0],
                motion=motion,
                role=role,
                enter_at_s=k * interval_m / speed_mps,
            )
        )
    return out


def spawn_field_peers(
    spec: FieldSpec,
    seed: int,
    max_speed_mps: float,
    *,
    n_sellers: int = 1,
    seller_at: str | int = "first",
    start_id: int = 0,
    speed_floor: float = 0.2,
) -> list[PeerSpawn]:
    """Spawn a bounded-field population at random positions and headings.

    Each peer gets its own RNG stream derived from ``(seed, peer id)``, so
    a peer's draw does not depend on how many peers precede it. Speeds are
    constant per peer, drawn from (speed_floor * v_max, v_max]; a max speed
    of zero produces static peers.
    """
    if n_sellers > spec.n_peers:
        raise ValueError("more sellers than field peers")
    sellers = _seller_indices(seller_at, n_sellers, spec.n_peers)
    out = []
    for k in range(spec.n_peers):
        pid = start_id + k
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, pid]))
        x = rng.random() * spec.side_m
        y = rng.random() * spec.side_m
        heading = rng.random() * 2.0 * math.pi
        speed = max_speed_mps * (speed_floor + (1.0 - speed_floor) * (1.0 - rng.random()))
        kind = MotionKind.STATIC if speed == 0.0 else MotionKind.RANDOM_WALK
        motion = MotionState(kind=kind, heading=heading, speed_mps=speed, x_m=x, y_m=y)
        role = Role.SELLER if k in sellers else Role.BUYER
        out.append(PeerSpawn(pid, offset_point(spec.anchor, x, y), motion, role, 0.0))
    return out


def step_uniform(m: MotionState, path: PathSpec | Polyline, dt: float, speed: float) -> MotionState:
    """Advance a uniform-pace peer ``speed * dt`` meters, clamped at path end.

    The state is updated in place and returned; callers detect the end of
    the path by comparing the offset against the path length.
    """
    line = path.line if isinstance(path, PathSpec) else path
    m.speed_mps = speed
    m.path_offset_m = min(m.path_offset_m + speed * dt, line.length)
    return m


def step_irregular(
    m: MotionState,
    path: PathSpec | Polyline,
    dt: float,
    rng: np.random.Generator,
    v_max: float = 1.0,
    params: IrregularParams = IrregularParams(),
) -> MotionState:
    """Advance a start-stop peer: pause, or move at a freshly drawn speed.

    While paused the remaining pause only counts down. Otherwise a pause
    begins with probability ``p_pause`` (length uniform on
    {pause_min_s..pause_max_s}), else the peer advances at a speed drawn
    uniformly from (speed_floor * v_max, v_max].
    """
    line = path.line if isinstance(path, PathSpec) else path
    if m.pause_remaining_s > 0:
        m.pause_remaining_s = max(0.0, m.pause_remaining_s - dt)
        m.speed_mps = 0.0
        return m
    if rng.random() < params.p_pause:
        # this tick is the first paused tick
        m.pause_remaining_s = float(rng.integers(params.pause_min_s, params.pause_max_s + 1)) - dt
        m.speed_mps = 0.0
        return m
    m.speed_mps = v_max * (params.speed_floor + (1.0 - params.speed_floor) * (1.0 - rng.random()))
    m.path_offset_m = min(m.path_offset_m + m.speed_mps * dt, line.length)
    return m


def step_random_walk(
    m: MotionState,
    spec: FieldSpec,
    dt: float,
    rng: np.random.Generator | None = None,
) -> MotionState:
    """Advance a field walker, reflecting specularly off the field edges.

    The base model changes heading only on boundary contact, so ``rng`` is
    accepted for interface uniformity but unused.
    """
    step = m.speed_mps * dt
    hx = math.cos(m.heading)
    hy = math.sin(m.heading)
    x = m.x_m + hx * step
    y = m.y_m + hy * step
    side = spec.side_m
    while x < 0.0 or x > side:
        x = -x if x < 0.0 else 2.0 * side - x
        hx = -hx
    while y < 0.0 or y > side:
        y = -y if y < 0.0 else 2.0 * side - y
        hy = -hy
    m.x_m = x
    m.y_m = y
    m.heading = math.atan2(hy, hx)
    return m


def make_bidirectional(spec: PathSpec) -> list[PathSpec]:
    """A path plus its reverse, both flagged bidirectional."""
    fwd = replace(spec, bidirectional=True)
    return [fwd, fwd.reversed()]


def build_grid(
    anchor: WayPoint,
    lines: int,
    spacing_m: float,
    sellers: int = 1,
    buyers_per_line: int = 0,
    mode: MobilityMode = MobilityMode.UNIFORM,
) -> list[PathSpec]:
    """Square grid of bidirectional streets: 4 * lines path specs.

    ``lines`` streets per axis, ``spacing_m`` apart, each traveled in both
    directions; the sellers ride the first emitted path.
    """
    return _build_grid_rc(anchor, lines, lines, spacing_m, sellers, buyers_per_line, mode)


def _build_grid_rc(
    anchor: WayPoint,
    rows: int,
    cols: int,
    spacing_m: float,
    sellers: int,
    buyers_per_line: int,
    mode: MobilityMode = MobilityMode.UNIFORM,
) -> list[PathSpec]:
    if rows < 1 or cols < 1:
        raise ValueError("grid needs at least one line per axis")
    if spacing_m <= 0:
        raise ValueError("grid spacing must be > 0")
    extent = spacing_m * max(max(rows, cols) - 1, 1)
    specs: list[PathSpec] = []
    for k in range(rows):  # west-east streets
        y = k * spacing_m
        a = offset_point(anchor, 0.0, y)
        b = offset_point(anchor, extent, y)
        specs.extend(make_bidirectional(PathSpec(mode, (a, b), 0, buyers_per_line)))
    for k in range(cols):  # south-north streets
        x = k * spacing_m
        a = offset_point(anchor, x, 0.0)
        b = offset_point(anchor, x, extent)
        specs.extend(make_bidirectional(PathSpec(mode, (a, b), 0, buyers_per_line)))
    specs[0] = replace(specs[0], n_sellers=sellers)
    return specs
