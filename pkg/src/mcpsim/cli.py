"""Experiment runner CLI: build a scenario, run replications, write artifacts.

Exactly one scenario source is required (--map, --trace, --grid or --field).
Each replication writes ``run_<k>.csv``; the per-tick mean/stddev lands in
``aggregate.csv``; ``--kml`` adds ``tracks_<k>.kml``. A human-diffable
summary block is printed on success.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .engine import ConfigError, Scenario, SimConfig, replication_seed, run, run_replicated
from .geo import WayPoint
from .mobility import MapParseError, MobilityMode, FieldSpec, parse_map, _build_grid_rc
from .protocol import KillPolicy, ProtocolMode
from .stats import aggregate_runs, emit_csv, emit_kml
from .traces import TraceParseError, parse_contacts, run_trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2

_DEFAULT_ANCHOR = WayPoint(51.4983, -0.1791)  # grid/field anchor when none is mapped


@dataclass
class ExperimentSpec:
    """One resolved experiment: a single scenario source plus the knobs."""

    config: SimConfig
    out_dir: Path
    map_path: Optional[Path] = None
    trace_path: Optional[Path] = None
    grid: Optional[tuple[int, int, float]] = None  # rows, cols, spacing_m
    field: Optional[tuple[float, int]] = None  # side_m, n_peers
    beacons_path: Optional[Path] = None
    mobility: MobilityMode = MobilityMode.UNIFORM
    buyers_per_line: int = 25
    write_kml: bool = False


def _parse_grid(text: str) -> tuple[int, int, float]:
    m = re.fullmatch(r"(\d+)x(\d+):([0-9.]+)", text)
    if not m:
        raise argparse.ArgumentTypeError("grid must look like ROWSxCOLS:SPACING_M, e.g. 2x2:1000")
    return int(m.group(1)), int(m.group(2)), float(m.group(3))


def _parse_field(text: str) -> tuple[float, int]:
    m = re.fullmatch(r"([0-9.]+):(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError("field must look like SIDE_M:N_PEERS, e.g. 300:101")
    return float(m.group(1)), int(m.group(2))


def _parse_limit(text: str, kind: type):
    if text.lower() in ("inf", "none", "unlimited"):
        return None
    try:
        return kind(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}") from None


def _parse_seed_peer(text: str):
    if text in ("first", "middle", "last"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seed peer must be first|middle|last or an index, got {text!r}"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mcpsim",
        description="Market Contact Protocol simulator: geographic mobility or trace replay.",
    )
    src = p.add_argument_group("scenario source (choose exactly one)")
    src.add_argument("--map", type=Path, help="map file of path/beacon/field lines")
    src.add_argument("--trace", type=Path, help="normalized contact trace file (id_a id_b t0 t1)")
    src.add_argument("--grid", type=_parse_grid, metavar="RxC:SPACING",
                     help="bidirectional street grid, spacing in meters (e.g. 2x2:1000)")
    src.add_argument("--field", type=_parse_field, metavar="SIDE:N",
                     help="bounded random-walk square: side in meters, peer count")
    p.add_argument("--duration", type=int, default=3600, help="simulated seconds (default 3600)")
    p.add_argument("--range", type=float, default=10.0, dest="range_m",
                   help="broadcast range in meters (default 10)")
    p.add_argument("--period", type=int, default=60,
                   help="seconds between a seller's broadcasts (default 60)")
    p.add_argument("--share", type=float, default=1.0,
                   help="probability in [0,1] that a peer proxies content (default 1.0)")
    p.add_argument("--speed", type=float, default=1.0,
                   help="maximum peer speed in m/s (default 1.0)")
    p.add_argument("--interval", type=float, default=8.0,
                   help="spacing in meters between peers entering a path (default 8)")
    p.add_argument("--mode", choices=["simple", "extended"], default="simple",
                   help="protocol variant (default simple)")
    p.add_argument("--threshold", type=int, default=None,
                   help="extended mode: sample replies required before content is broadcast")
    p.add_argument("--drop", type=float, default=0.0,
                   help="per-receiver fault probability in [0,1] (default 0)")
    p.add_argument("--kill-hops", type=_parse_limit_int, default=None, metavar="N|inf",
                   help="forward-hop budget per message (default inf)")
    p.add_argument("--kill-ttl", type=_parse_limit_float, default=None, metavar="S|inf",
                   help="message time-to-live in seconds from creation (default inf)")
    p.add_argument("--seed-peer", type=_parse_seed_peer, default="first",
                   metavar="first|middle|last|IDX", help="where the seeding seller rides")
    p.add_argument("--beacons", type=Path, help="extra map file whose BEACON lines are added")
    p.add_argument("--mobility", choices=["uniform", "irregular"], default="uniform",
                   help="pace model for --grid paths (default uniform)")
    p.add_argument("--buyers-per-line", type=int, default=25,
                   help="buyers entering each --grid path (default 25)")
    p.add_argument("--hold-at-end", action="store_true",
                   help="peers reaching a path end stay as static peers instead of leaving")
    p.add_argument("--reps", type=int, default=5, help="replications (default 5)")
    p.add_argument("--seed", type=int, default=1, help="base RNG seed (default 1)")
    p.add_argument("--out", type=Path, default=Path("out"), help="artifact directory (default ./out)")
    p.add_argument("--kml", action="store_true", help="also write per-peer KML tracks")
    p.add_argument("--density", action="store_true",
                   help="record per-peer density series, not just the seed peer's")
    return p


def _parse_limit_int(text: str):
    return _parse_limit(text, int)


def _parse_limit_float(text: str):
    return _parse_limit(text, float)


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    sources = [s for s in (args.map, args.trace, args.grid, args.field) if s is not None]
    if len(sources) != 1:
        raise ConfigError("choose exactly one of --map, --trace, --grid, --field")
    config = SimConfig(
        duration_s=args.duration,
        range_m=args.range_m,
        period_s=args.period,
        share_probability=args.share,
        max_speed_mps=args.speed,
        interval_m=args.interval,
        mode=ProtocolMode(args.mode),
        threshold=args.threshold,
        drop_probability=args.drop,
        kill=KillPolicy(hops_remaining=args.kill_hops, expires_at=args.kill_ttl),
        seed=args.seed,
        replications=args.reps,
        seed_peer_position=args.seed_peer,
        hold_at_end=args.hold_at_end,
        record_tracks=args.kml,
        density_all_peers=args.density,
    )
    return ExperimentSpec(
        config=config,
        out_dir=args.out,
        map_path=args.map,
        trace_path=args.trace,
        grid=args.grid,
        field=args.field,
        beacons_path=args.beacons,
        mobility=MobilityMode.UNIFORM if args.mobility == "uniform" else MobilityMode.IRREGULAR,
        buyers_per_line=args.buyers_per_line,
        write_kml=args.kml,
    )


def _build_scenario(spec: ExperimentSpec) -> Scenario:
    if spec.map_path is not None:
        scenario = Scenario.from_map(parse_map(spec.map_path.read_text()))
    elif spec.grid is not None:
        rows, cols, spacing = spec.grid
        paths = _build_grid_rc(
            _DEFAULT_ANCHOR, rows, cols, spacing,
            sellers=1, buyers_per_line=spec.buyers_per_line, mode=spec.mobility,
        )
        scenario = Scenario(paths=paths)
    else:
        side, n = spec.field
        scenario = Scenario(field_areas=[FieldSpec(side, n, _DEFAULT_ANCHOR)])
    if spec.beacons_path is not None:
        scenario.beacons.extend(parse_map(spec.beacons_path.read_text()).beacons)
    return scenario


def _print_summary(aggregate, config: SimConfig, last_sent_ms: Optional[float]) -> None:
    tm = aggregate.totals_mean
    frac = aggregate.mean["infected_fraction"][-1] * 100.0
    print("STATS")
    print()
    print("SIMULATION PARAMETERS")
    print()
    print(f"Number of Nodes: {aggregate.n_peers}")
    print(f"Range: {config.range_m:g} meters")
    print(f"Period: {config.period_s} seconds")
    print(f"Mode: {config.mode.value}")
    print()
    print(f"Sharing Probability {config.share_probability * 100:g}")
    print(f"Nodes who got the content {frac:.6g}%")
    if last_sent_ms is not None:
        print(f"Last Message Sent {last_sent_ms:.0f}")
    print(f"Total Messages Sent {tm['total_sent']:g}")
    print(f"Total Messages Received {tm['delivered']:g}")
    print(f"Messages Dropped by Faults {tm['dropped']:g}")
    print(f"Redundant Receipts {tm['redundant']:g}")
    print(f"Expired (Killed) {tm['expired_killed']:g}")


def run_experiment(spec: ExperimentSpec) -> tuple[int, list[Path]]:
    """Execute the experiment and write its artifacts; returns (exit, paths)."""
    config = spec.config
    config.validate()
    artifacts: list[Path] = []
    if spec.trace_path is not None:
        events, roster = parse_contacts(spec.trace_path.read_text())
        results = [
            run_trace(replace(config, seed=replication_seed(config.seed, k)), events, roster)
            for k in range(config.replications)
        ]
    else:
        scenario = _build_scenario(spec)
        results, _ = run_replicated(config, config.replications, scenario)
    aggregate = aggregate_runs(results)

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    for k, result in enumerate(results, start=1):
        path = spec.out_dir / f"run_{k}.csv"
        path.write_text(emit_csv(result))
        artifacts.append(path)
        if spec.write_kml and result.tracks:
            kml_path = spec.out_dir / f"tracks_{k}.kml"
            kml_path.write_text(emit_kml(result.tracks, result.infection_times))
            artifacts.append(kml_path)
    agg_path = spec.out_dir / "aggregate.csv"
    agg_path.write_text(emit_csv(aggregate))
    artifacts.append(agg_path)

    # the mean last-sent time feeds the summary block only
    sent = [r.last_sent for r in results if r.last_sent is not None]
    last_sent_ms = (sum(sent) / len(sent) * 1000.0) if sent else None
    _print_summary(aggregate, config, last_sent_ms)
    for path in artifacts:
        print(f"wrote {path}")
    return EXIT_OK, artifacts


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = _spec_from_args(args)
        status, _ = run_experiment(spec)
        return status
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"mcpsim: cannot read input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MapParseError, TraceParseError) as exc:
        print(f"mcpsim: bad input file: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError) as exc:
        print(f"mcpsim: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
