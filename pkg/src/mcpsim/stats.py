"""Run statistics, Verhulst logistic evaluation/fitting, CSV and KML output."""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geo import WayPoint

COUNTER_NAMES = (
    "content_sent",
    "sample_sent",
    "reply_sent",
    "delivered",
    "dropped",
    "redundant",
)


class FitError(ValueError):
    """The series cannot support a logistic fit."""


@dataclass
class RunResult:
    """Everything one run produced: per-tick series, totals and tracks.

    The six message counters are cumulative per tick; ``density`` is the
    neighbor count seen from the first seller peer unless per-peer density
    was requested.
    """

    times: np.ndarray
    infected_counts: np.ndarray
    n_peers: int
    counters: dict[str, np.ndarray]
    expired_killed: int = 0
    reception_opportunities: int = 0
    reply_intents: int = 0
    density: list = field(default_factory=list)  # (tick, neighbor count)
    density_by_peer: Optional[dict] = None
    contact_totals: dict = field(default_factory=dict)  # peer_id -> contacts heard
    tracks: dict = field(default_factory=dict)  # peer_id -> [(tick, WayPoint)]
    infection_times: dict = field(default_factory=dict)  # peer_id -> first infected tick
    last_sent: Optional[int] = None
    last_received: Optional[int] = None
    config: dict = field(default_factory=dict)

    @property
    def infected_fraction(self) -> np.ndarray:
        return self.infected_counts / float(self.n_peers)

    @property
    def totals(self) -> dict[str, int]:
        return {name: int(self.counters[name][-1]) for name in COUNTER_NAMES}

    @property
    def total_sent(self) -> int:
        t = self.totals
        return t["content_sent"] + t["sample_sent"] + t["reply_sent"]


@dataclass
class Aggregate:
    """Mean and standard deviation over replicated runs (population std)."""

    times: np.ndarray
    n_runs: int
    n_peers: int
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    totals_mean: dict[str, float]
    totals_std: dict[str, float]


def aggregate_runs(results: Sequence[RunResult]) -> Aggregate:
    if not results:
        raise ValueError("no runs to aggregate")
    length = len(results[0].times)
    if any(len(r.times) != length for r in results):
        raise ValueError("runs have mismatched durations")
    series: dict[str, np.ndarray] = {
        "infected_count": np.stack([r.infected_counts for r in results]).astype(float),
        "infected_fraction": np.stack([r.infected_fraction for r in results]),
    }
    for name in COUNTER_NAMES:
        series[name] = np.stack([r.counters[name] for r in results]).astype(float)
    totals: dict[str, np.ndarray] = {
        name: np.array([r.totals[name] for r in results], dtype=float) for name in COUNTER_NAMES
    }
    totals["total_sent"] = np.array([r.total_sent for r in results], dtype=float)
    totals["expired_killed"] = np.array([r.expired_killed for r in results], dtype=float)
    totals["reception_opportunities"] = np.array(
        [r.reception_opportunities for r in results], dtype=float
    )
    return Aggregate(
        times=results[0].times.copy(),
        n_runs=len(results),
        n_peers=results[0].n_peers,
        mean={k: v.mean(axis=0) for k, v in series.items()},
        std={k: v.std(axis=0) for k, v in series.items()},
        totals_mean={k: float(v.mean()) for k, v in totals.items()},
        totals_std={k: float(v.std()) for k, v in totals.items()},
    )


# --- logistic growth --------------------------------------------------------


@dataclass(frozen=True)
class LogisticParams:
    """Verhulst parameters: carrying capacity, initial population, rate."""

    k: float
    p0: float
    r: float

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError("carrying capacity must be > 0")
        if not 0 < self.p0 <= self.k:
            raise ValueError("initial population must lie in (0, K]")


def logistic_value(params: LogisticParams, t) -> float | np.ndarray:
    """Continuous logistic population at time t.

    P(t) = K P0 e^{rt} / (K + P0 (e^{rt} - 1)), evaluated in the
    exp(-rt) form so large r*t saturates cleanly at K instead of
    overflowing.
    """
    k, p0, r = params.k, params.p0, params.r
    rt = np.asarray(r * np.asarray(t, dtype=float))
    e = np.exp(np.clip(-rt, -700.0, 700.0))
    out = k * p0 / (p0 + (k - p0) * e)
    return float(out) if out.ndim == 0 else out


def logistic_map_iterate(r: float, p0: float, n: int) -> list[float]:
    """Iterate the discrete logistic map p -> r p (1 - p), n steps."""
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    out = []
    p = p0
    for _ in range(n):
        p = r * p * (1.0 - p)
        out.append(p)
    return out


def _golden_min(f, lo: float, hi: float, iters: int = 60) -> float:
    """Golden-section minimum of a unimodal f on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_logistic(
    series, k: Optional[float] = None, *, fit_k: bool = False
) -> tuple[LogisticParams, float]:
    """Least-squares (r, P0) fit with K held fixed; returns (params, R^2).

    K defaults to the final value of the series (the carrying capacity the
    run itself revealed); pass ``fit_k=True`` to co-fit it. The fit is a
    coarse grid search refined by golden-section on each parameter.
    """
    rows = [(float(p[0]), float(p[1])) for p in series]
    if len(rows) < 5:
        raise FitError("need at least 5 points")
    t = np.array([p[0] for p in rows])
    y = np.array([p[1] for p in rows])
    if not np.any(np.diff(y) > 0):
        raise FitError("degenerate series")
    k_fixed = float(y[-1]) if k is None else float(k)
    if k_fixed <= 0:
        raise FitError("carrying capacity must be positive")

    def sse(kv: float, p0: float, r: float) -> float:
        pred = logistic_value(LogisticParams(kv, min(p0, kv), r), t)
        return float(np.sum((pred - y) ** 2))

    t_span = max(float(t[-1] - t[0]), 1.0)
    r_grid = np.geomspace(1e-3 / t_span, 1e3 / t_span, 61)
    p0_lo = max(min(float(np.min(y[y > 0], initial=k_fixed)), k_fixed) * 1e-3, 1e-9)
    p0_grid = np.geomspace(p0_lo, k_fixed, 41)
    k_grid = [k_fixed] if not fit_k else list(np.linspace(max(y.max(), 1e-9), 2.0 * y.max(), 9))

    best = None
    for kv in k_grid:
        for r in r_grid:
            for p0 in p0_grid:
                err = sse(kv, p0, r)
                if best is None or err < best[0]:
                    best = (err, kv, p0, r)
    _, kv, p0, r = best
    for _ in range(3):  # coordinate refinement
        r = _golden_min(lambda x: sse(kv, p0, x), r / 4.0, r * 4.0)
        p0 = _golden_min(lambda x: sse(kv, x, r), max(p0 / 4.0, 1e-12), min(p0 * 4.0, kv))
        if fit_k:
            kv = _golden_min(lambda x: sse(x, p0, r), max(kv / 2.0, y.max()), kv * 2.0)
    params = LogisticParams(kv, min(p0, kv), r)
    ss_res = sse(kv, p0, r)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return params, r2


# --- CSV --------------------------------------------------------------------


def _fmt(value) -> str:
    # ints stay ints; floats use repr so parsing recovers them exactly
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else str(value)


def _summary_pairs(result: RunResult) -> list[tuple[str, object]]:
    cfg = result.config
    totals = result.totals
    frac = result.infected_fraction
    return [
        ("nodes", result.n_peers),
        ("range_m", cfg.get("range_m")),
        ("period_s", cfg.get("period_s")),
        ("sharing_probability", cfg.get("share_probability")),
        ("mode", cfg.get("mode")),
        ("threshold", cfg.get("threshold")),
        ("duration_s", cfg.get("duration_s")),
        ("seed", cfg.get("seed")),
        ("percent_infected", float(frac[-1]) * 100.0),
        ("last_message_sent_ms", None if result.last_sent is None else result.last_sent * 1000),
        (
            "last_message_received_ms",
            None if result.last_received is None else result.last_received * 1000,
        ),
        ("content_sent", totals["content_sent"]),
        ("sample_sent", totals["sample_sent"]),
        ("reply_sent", totals["reply_sent"]),
        ("total_messages_sent", result.total_sent),
        ("total_messages_received", totals["delivered"]),
        ("dropped_by_fault", totals["dropped"]),
        ("redundant_receipts", totals["redundant"]),
        ("expired_killed", result.expired_killed),
        ("reception_opportunities", result.reception_opportunities),
        ("reply_intents", result.reply_intents),
    ]


def emit_csv(result: RunResult | Aggregate) -> str:
    """Render a run (or an aggregate) as CSV text.

    Two tables: one row per tick with the infection state and cumulative
    message counters, then a blank line and a summary table. Unix newlines,
    ``,`` delimiter, ``.`` decimals; floats are written with round-trip
    precision so parsing recovers every numeric field exactly.
    """
    lines: list[str] = []
    if isinstance(result, Aggregate):
        names = ["infected_count", "infected_fraction", *COUNTER_NAMES]
        header = ["time"]
        for name in names:
            header += [f"{name}_mean", f"{name}_std"]
        lines.append(",".join(header))
        for i, tick in enumerate(result.times):
            row = [_fmt(int(tick))]
            for name in names:
                row += [_fmt(result.mean[name][i]), _fmt(result.std[name][i])]
            lines.append(",".join(row))
        lines.append("")
        lines.append("metric,mean,std")
        lines.append(f"runs,{result.n_runs},0")
        lines.append(f"nodes,{result.n_peers},0")
        for key in sorted(result.totals_mean):
            lines.append(
                f"{key},{_fmt(result.totals_mean[key])},{_fmt(result.totals_std[key])}"
            )
    else:
        lines.append(
            "time,infected_count,infected_fraction," + ",".join(COUNTER_NAMES)
        )
        frac = result.infected_fraction
        for i, tick in enumerate(result.times):
            row = [
                _fmt(int(tick)),
                _fmt(int(result.infected_counts[i])),
                _fmt(float(frac[i])),
            ]
            row += [_fmt(int(result.counters[name][i])) for name in COUNTER_NAMES]
            lines.append(",".join(row))
        lines.append("")
        lines.append("metric,value")
        for key, value in _summary_pairs(result):
            lines.append(f"{key},{_fmt(value)}")
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> tuple[dict[str, list], dict[str, str]]:
    """Parse emit_csv output back into (tick columns, summary dict)."""
    tick_part, _, summary_part = text.partition("\n\n")
    tick_lines = tick_part.strip().splitlines()
    header = tick_lines[0].split(",")
    columns: dict[str, list] = {name: [] for name in header}
    for line in tick_lines[1:]:
        for name, cell in zip(header, line.split(",")):
            columns[name].append(float(cell) if ("." in cell or "e" in cell) else int(cell))
    summary: dict[str, str] = {}
    for line in summary_part.strip().splitlines()[1:]:
        key, _, value = line.partition(",")
        summary[key] = value
    return columns, summary


# --- KML --------------------------------------------------------------------

_KML_STAMP_EPOCH = datetime.datetime(1970, 1, 1, tzinfo=datetime.timezone.utc)


def _kml_when(tick: int) -> str:
    stamp = _KML_STAMP_EPOCH + datetime.timedelta(seconds=int(tick))
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


def emit_kml(tracks: dict, infection_times: dict, *, name: str = "mcpsim tracks") -> str:
    """Render per-peer tracks as a KML 2.2 document.

    One Placemark per peer holding a LineString of lon,lat pairs in time
    order, styled by final infection status, plus one timestamped Placemark
    per infection event.
    """
    peers = [pid for pid, points in sorted(tracks.items()) if points]
    if not peers:
        raise ValueError("empty track log")
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<kml xmlns="http://www.opengis.net/kml/2.2">',
        "<Document>",
        f"  <name>{name}</name>",
        '  <Style id="infected"><LineStyle><color>ff0000ff</color><width>2</width></LineStyle></Style>',
        '  <Style id="clean"><LineStyle><color>ffcc6600</color><width>2</width></LineStyle></Style>',
    ]
    for pid in peers:
        style = "infected" if pid in infection_times else "clean"
        coords = " ".join(f"{wp.lon!r},{wp.lat!r}" for _, wp in tracks[pid])
        lines += [
            "  <Placemark>",
            f"    <name>peer {pid}</name>",
            f"    <styleUrl>#{style}</styleUrl>",
            "    <LineString>",
            "      <tessellate>1</tessellate>",
            f"      <coordinates>{coords}</coordinates>",
            "    </LineString>",
            "  </Placemark>",
        ]
    for pid in peers:
        tick = infection_times.get(pid)
        if tick is None:
            continue
        at = next((wp for t, wp in tracks[pid] if t >= tick), tracks[pid][-1][1])
        lines += [
            "  <Placemark>",
            f"    <name>peer {pid} infected t={tick}</name>",
            f"    <TimeStamp><when>{_kml_when(tick)}</when></TimeStamp>",
            f"    <Point><coordinates>{at.lon!r},{at.lat!r}</coordinates></Point>",
            "  </Placemark>",
        ]
    lines += ["</Document>", "</kml>"]
    return "\n".join(lines) + "\n"
