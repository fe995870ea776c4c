"""Discrete-time simulation kernel: the world, the tick loop, replication.

Each tick runs a fixed order: (1) move peers, (2) collect due broadcasts,
(3) deliver content/samples by geographic range, (4) deliver sample replies
and evaluate threshold gates, (5) expire killed messages, (6) snapshot
statistics. A broadcast never survives its own tick. Runs are bit-for-bit
deterministic given (config, scenario, seed): the world owns one RNG stream
for fault injection and every peer owns an independent stream derived from
the base seed, so adding a peer does not perturb the others.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels as kernels
from .geo import WayPoint, great_circle_distance, offset_point
from .mobility import (
    FieldSpec,
    IrregularParams,
    MapData,
    MobilityMode,
    MotionKind,
    MotionState,
    PathSpec,
    PeerSpawn,
    Role,
    spawn_field_peers,
    spawn_peers,
    step_irregular,
    step_random_walk,
    step_uniform,
)
from .protocol import (
    BuyerPolicy,
    ContactDatabase,
    Incentive,
    KillPolicy,
    Message,
    MessageKind,
    Originator,
    Payload,
    PeerState,
    PeerStatus,
    ProtocolMode,
    SellerPolicy,
    make_message,
    on_receive,
    expire_messages,
    seller_tick,
    threshold_gate,
)
from .stats import COUNTER_NAMES, Aggregate, RunResult, aggregate_runs


class ConfigError(ValueError):
    """Invalid or inconsistent simulation configuration."""


@dataclass
class SimConfig:
    """All knobs for one experiment.

    ``kill.expires_at`` is interpreted as a time-to-live in seconds relative
    to each message's creation; periods and the duration are whole seconds
    (one tick each).
    """

    duration_s: int = 3600
    range_m: float = 10.0
    period_s: int = 60
    share_probability: float = 1.0
    max_speed_mps: float = 1.0
    interval_m: float = 8.0
    mode: ProtocolMode = ProtocolMode.SIMPLE
    threshold: Optional[int] = None
    drop_probability: float = 0.0
    kill: KillPolicy = field(default_factory=KillPolicy)
    seed: int = 1
    replications: int = 5
    seed_peer_position: str | int = "first"
    hold_at_end: bool = False
    bystander_counting: bool = False
    irregular: IrregularParams = field(default_factory=IrregularParams)
    record_tracks: bool = False
    density_all_peers: bool = False
    audit_deliveries: bool = False
    # urban-junction attenuation: peers on different paths hear each other
    # only when both stand within range of a shared junction vertex
    junction_attenuation: bool = False

    def validate(self) -> None:
        if self.duration_s < 1:
            raise ConfigError("duration must be >= 1 second")
        if self.range_m <= 0:
            raise ConfigError("range must be > 0 meters")
        if self.period_s < 1:
            raise ConfigError("period must be >= 1 second")
        if not 0.0 <= self.share_probability <= 1.0:
            raise ConfigError("share probability must lie in [0, 1]")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop probability must lie in [0, 1]")
        if self.max_speed_mps < 0:
            raise ConfigError("max speed must be >= 0")
        if self.interval_m <= 0:
            raise ConfigError("interval must be > 0 meters")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if self.mode is ProtocolMode.EXTENDED and self.threshold is None:
            raise ConfigError("extended mode requires a threshold")
        if self.threshold is not None and self.threshold < 0:
            raise ConfigError("threshold must be >= 0")
        pos = self.seed_peer_position
        if not (isinstance(pos, int) or pos in ("first", "middle", "last")):
            raise ConfigError(f"bad seed peer position {pos!r}")

    def echo(self) -> dict:
        return {
            "range_m": self.range_m,
            "period_s": self.period_s,
            "share_probability": self.share_probability,
            "max_speed_mps": self.max_speed_mps,
            "interval_m": self.interval_m,
            "mode": self.mode.value,
            "threshold": self.threshold,
            "drop_probability": self.drop_probability,
            "duration_s": self.duration_s,
            "seed": self.seed,
        }


@dataclass
class Scenario:
    """What populates the world: paths, bounded fields, standing beacons."""

    paths: list[PathSpec] = field(default_factory=list)
    beacons: list[WayPoint] = field(default_factory=list)
    field_areas: list[FieldSpec] = field(default_factory=list)
    field_sellers: int = 1

    @classmethod
    def from_map(cls, data: MapData) -> "Scenario":
        return cls(paths=list(data.paths), beacons=list(data.beacons), field_areas=list(data.fields))

    def is_empty(self) -> bool:
        return not self.paths and not self.beacons and not self.field_areas


def _resolve_kill(template: KillPolicy, created_at: int) -> KillPolicy:
    expires = None if template.expires_at is None else created_at + template.expires_at
    return replace(template, expires_at=expires)


class World:
    """Peers, their shared ether, and the per-tick statistics accumulator."""

    def __init__(self, config: SimConfig, scenario: Scenario):
        config.validate()
        self.config = config
        self.scenario = scenario
        self.clock = 0
        self.peers: list[PeerState] = []
        self._spawn_all()
        n = len(self.peers)
        self._lat = np.array([p.position.lat for p in self.peers], dtype=np.float64)
        self._lon = np.array([p.position.lon for p in self.peers], dtype=np.float64)
        self._active = np.zeros(n, dtype=np.bool_)
        self._pending = [(p.enter_at_s, p.peer_id) for p in self.peers]
        heapq.heapify(self._pending)
        self._movers: list[int] = []
        self._active_ids: list[int] = []
        self._carriers: set[int] = set()
        self._world_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        self._peer_rngs: dict[int, np.random.Generator] = {}
        ticks = config.duration_s + 1
        self._infected_series = np.zeros(ticks, dtype=np.int64)
        self._counter_series = {name: np.zeros(ticks, dtype=np.int64) for name in COUNTER_NAMES}
        self._running = dict.fromkeys(COUNTER_NAMES, 0)
        self.infected_total = 0
        self.infection_times: dict[int, int] = {}
        self.expired_killed = 0
        self.reception_opportunities = 0
        self.reply_intents = 0
        self.last_sent: Optional[int] = None
        self.last_received: Optional[int] = None
        self.density: list[tuple[int, int]] = []
        self.density_by_peer: Optional[dict[int, list]] = (
            {p.peer_id: [] for p in self.peers} if config.density_all_peers else None
        )
        self.tracks: dict[int, list] = {p.peer_id: [] for p in self.peers} if config.record_tracks else {}
        self.audit_log: list[tuple[int, int, int, float]] = []
        sellers = [p.peer_id for p in self.peers if p.role is Role.SELLER]
        self._density_pid = sellers[0] if sellers else None
        self._junctions = self._find_junctions() if config.junction_attenuation else []

    def _find_junctions(self) -> list[WayPoint]:
        # junctions are vertices shared by at least two distinct paths
        seen: dict[tuple[float, float], int] = {}
        for spec in self.scenario.paths:
            for wp in set(spec.vertices):
                seen[(wp.lat, wp.lon)] = seen.get((wp.lat, wp.lon), 0) + 1
        return [WayPoint(lat, lon) for (lat, lon), count in sorted(seen.items()) if count >= 2]

    def _junction_reachable(self, a: PeerState, b: PeerState) -> bool:
        if a.path is None or b.path is None:
            return True
        # both directions of a bidirectional street are the same segment
        if frozenset(a.path.vertices) == frozenset(b.path.vertices):
            return True
        r = self.config.range_m
        for j in self._junctions:
            if great_circle_distance(a.position, j) <= r and great_circle_distance(b.position, j) <= r:
                return True
        return False

    # -- construction ---------------------------------------------------

    def _seller_policy(self) -> SellerPolicy:
        cfg = self.config
        return SellerPolicy(period_s=cfg.period_s, mode=cfg.mode, threshold=cfg.threshold)

    def _buyer_policy(self, share: Optional[float] = None) -> BuyerPolicy:
        p = self.config.share_probability if share is None else share
        return BuyerPolicy(share_probability=p)

    def _add_spawn(self, spawn: PeerSpawn, path: Optional[PathSpec], field_spec: Optional[FieldSpec]) -> None:
        peer = PeerState(
            peer_id=spawn.peer_id,
            role=spawn.role,
            position=spawn.position,
            motion=spawn.motion,
            seller=self._seller_policy(),
            buyer=self._buyer_policy(1.0 if spawn.role is Role.BEACON else None),
            path=path,
            field_spec=field_spec,
            enter_at_s=spawn.enter_at_s,
        )
        self.peers.append(peer)

    def _spawn_all(self) -> None:
        cfg = self.config
        next_id = 0
        seed_assigned = False
        for spec in self.scenario.paths:
            at = cfg.seed_peer_position if (spec.n_sellers and not seed_assigned) else "first"
            seed_assigned = seed_assigned or spec.n_sellers > 0
            for spawn in spawn_peers(
                spec, cfg.interval_m, max(cfg.max_speed_mps, 1e-9), seller_at=at, start_id=next_id
            ):
                self._add_spawn(spawn, spec, None)
            next_id = len(self.peers)
        for area in self.scenario.field_areas:
            at = cfg.seed_peer_position if (self.scenario.field_sellers and not seed_assigned) else "first"
            seed_assigned = seed_assigned or self.scenario.field_sellers > 0
            for spawn in spawn_field_peers(
                area,
                cfg.seed,
                cfg.max_speed_mps,
                n_sellers=self.scenario.field_sellers,
                seller_at=at,
                start_id=next_id,
                speed_floor=cfg.irregular.speed_floor,
            ):
                self._add_spawn(spawn, None, area)
            next_id = len(self.peers)
        for wp in self.scenario.beacons:
            spawn = PeerSpawn(next_id, wp, MotionState(kind=MotionKind.STATIC), Role.BEACON, 0.0)
            self._add_spawn(spawn, None, None)
            next_id += 1

    def _peer_rng(self, pid: int) -> np.random.Generator:
        rng = self._peer_rngs.get(pid)
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 1, pid]))
            self._peer_rngs[pid] = rng
        return rng

    # -- per-tick steps ---------------------------------------------------

    def _mark_infected(self, peer: PeerState, tick: int) -> None:
        if peer.peer_id not in self.infection_times:
            self.infection_times[peer.peer_id] = tick
            self.infected_total += 1

    def _activate_entrants(self, t: int) -> None:
        while self._pending and self._pending[0][0] <= t:
            _, pid = heapq.heappop(self._pending)
            peer = self.peers[pid]
            peer.status = PeerStatus.ACTIVE
            peer.entry_time = t
            self._active[pid] = True
            self._active_ids.append(pid)
            if self.config.record_tracks:
                self.tracks[pid].append((t, peer.position))
            if peer.motion.kind is not MotionKind.STATIC:
                self._movers.append(pid)
            if peer.role is Role.SELLER:
                msg = make_message(
                    Originator(peer_id=pid, imei=f"{pid:015d}"),
                    Payload(content=f"content of peer {pid}"),
                    Incentive(),
                    _resolve_kill(self.config.kill, t),
                    created_at=t,
                )
                peer.contacts.stored_messages[msg.msg_id] = msg
                peer.infected_at[msg.msg_id] = t
                self._carriers.add(pid)
                self._mark_infected(peer, t)

    def _exit_peer(self, pid: int, t: int) -> None:
        peer = self.peers[pid]
        if self.config.hold_at_end:
            peer.motion.kind = MotionKind.STATIC
        else:
            peer.status = PeerStatus.EXITED
            self._active[pid] = False
            self._active_ids.remove(pid)
            if self.config.record_tracks:
                # close the track at the path's end vertex
                self.tracks[pid].append((t, peer.position))

    def _move_peers(self, t: int) -> None:
        cfg = self.config
        finished: list[int] = []
        for pid in self._movers:
            peer = self.peers[pid]
            m = peer.motion
            kind = m.kind
            if kind is MotionKind.ON_PATH:
                line = peer.path.line
                before = m.path_offset_m
                if peer.path.mode is MobilityMode.UNIFORM:
                    step_uniform(m, line, 1.0, cfg.max_speed_mps)
                else:
                    step_irregular(m, line, 1.0, self._peer_rng(pid), cfg.max_speed_mps, cfg.irregular)
                moved = m.path_offset_m - before
                if moved:
                    peer.factors.distance_traveled_m += moved
                    peer.position = line.point_at(m.path_offset_m)
                    self._lat[pid] = peer.position.lat
                    self._lon[pid] = peer.position.lon
                if m.path_offset_m >= line.length:
                    finished.append(pid)
            elif kind is MotionKind.RANDOM_WALK:
                step_random_walk(m, peer.field_spec, 1.0)
                peer.factors.distance_traveled_m += m.speed_mps
                peer.position = offset_point(peer.field_spec.anchor, m.x_m, m.y_m)
                self._lat[pid] = peer.position.lat
                self._lon[pid] = peer.position.lon
            # STATIC peers (including held path peers) never move
        if finished:
            for pid in finished:
                self._exit_peer(pid, t)
            self._movers = [
                pid for pid in self._movers
                if self.peers[pid].status is PeerStatus.ACTIVE
                and self.peers[pid].motion.kind is not MotionKind.STATIC
            ]

    def _collect_broadcasts(self, t: int) -> tuple[list[tuple[int, Message]], list[int]]:
        outgoing: list[tuple[int, Message]] = []
        samplers: list[int] = []
        for pid in sorted(self._carriers):
            peer = self.peers[pid]
            if peer.status is not PeerStatus.ACTIVE:
                continue
            for msg in seller_tick(peer, t):
                outgoing.append((pid, msg))
                if msg.kind is MessageKind.SAMPLE:
                    samplers.append(pid)
                    self._count("sample_sent", t)
                else:
                    self._count("content_sent", t)
        return outgoing, samplers

    def _count(self, name: str, t: int) -> None:
        self._running[name] += 1
        if name in ("content_sent", "sample_sent", "reply_sent"):
            self.last_sent = t

    def _apply_receipt(self, rid: int, msg: Message, t: int, replies: list) -> None:
        peer = self.peers[rid]
        outcome = on_receive(peer, msg, t, self._peer_rng(rid))
        self._running["delivered"] += 1
        self.last_received = t
        if outcome.redundant:
            self._running["redundant"] += 1
        if outcome.newly_infected:
            self._mark_infected(peer, t)
        if outcome.stored:
            self._carriers.add(rid)
        if outcome.reply is not None:
            replies.append((rid, outcome.reply))
        if outcome.reply_intent:
            self.reply_intents += 1

    def _deliver_broadcasts(
        self, outgoing: list[tuple[int, Message]], t: int
    ) -> list[tuple[int, Message]]:
        replies: list[tuple[int, Message]] = []
        if not outgoing:
            return replies
        cfg = self.config
        senders = np.fromiter((sid for sid, _ in outgoing), np.int64, len(outgoing))
        masks = kernels.range_mask(self._lat, self._lon, senders, self._active, cfg.range_m)
        for row, (sid, msg) in enumerate(outgoing):
            idx = np.nonzero(masks[row])[0]
            if cfg.junction_attenuation and idx.size:
                sender = self.peers[sid]
                idx = np.array(
                    [rid for rid in idx if self._junction_reachable(sender, self.peers[rid])],
                    dtype=np.int64,
                )
            if idx.size == 0:
                continue
            self.reception_opportunities += int(idx.size)
            if cfg.drop_probability > 0.0:
                u = self._world_rng.random(idx.size)
                keep = u >= cfg.drop_probability
                self._running["dropped"] += int(idx.size - keep.sum())
                idx = idx[keep]
            if cfg.audit_deliveries and idx.size:
                dists = kernels.distances_from(self._lat, self._lon, self._lat[sid], self._lon[sid])
                for rid in idx:
                    self.audit_log.append((t, sid, int(rid), float(dists[rid])))
            for rid in idx:
                self._apply_receipt(int(rid), msg, t, replies)
        return replies

    def _deliver_replies(self, replies: list[tuple[int, Message]], samplers: list[int], t: int) -> None:
        cfg = self.config
        for rid, reply in replies:
            self._count("reply_sent", t)
            if cfg.bystander_counting:
                mask = kernels.range_mask(
                    self._lat, self._lon, np.array([rid], np.int64), self._active, cfg.range_m
                )[0]
                idx = np.nonzero(mask)[0]
                if cfg.junction_attenuation and idx.size:
                    replier = self.peers[rid]
                    idx = np.array(
                        [r2 for r2 in idx if self._junction_reachable(replier, self.peers[r2])],
                        dtype=np.int64,
                    )
                self.reception_opportunities += int(idx.size)
                if cfg.drop_probability > 0.0:
                    u = self._world_rng.random(idx.size)
                    keep = u >= cfg.drop_probability
                    self._running["dropped"] += int(idx.size - keep.sum())
                    idx = idx[keep]
                for rid2 in idx:
                    self._apply_receipt(int(rid2), reply, t, [])
            else:
                addr = reply.addressed_to
                if addr is None or not self._active[addr]:
                    continue
                dist = great_circle_distance(self.peers[rid].position, self.peers[addr].position)
                if dist > cfg.range_m:
                    continue
                if cfg.junction_attenuation and not self._junction_reachable(
                    self.peers[rid], self.peers[addr]
                ):
                    continue
                self.reception_opportunities += 1
                if cfg.drop_probability > 0.0 and self._world_rng.random() < cfg.drop_probability:
                    self._running["dropped"] += 1
                    continue
                self._apply_receipt(addr, reply, t, [])
        for pid in samplers:
            peer = self.peers[pid]
            if peer.awaiting_gate:
                peer.awaiting_gate = False
                if threshold_gate(peer.sample_replies, peer.seller):
                    peer.pending_content_at = t + 1

    def _expire(self, t: int) -> None:
        done = []
        for pid in sorted(self._carriers):
            peer = self.peers[pid]
            self.expired_killed += expire_messages(peer, t)
            if not peer.contacts.stored_messages:
                done.append(pid)
        for pid in done:
            self._carriers.discard(pid)

    def _snapshot(self, t: int) -> None:
        self._infected_series[t] = self.infected_total
        for name in COUNTER_NAMES:
            self._counter_series[name][t] = self._running[name]
        cfg = self.config
        if self._density_pid is not None:
            pid = self._density_pid
            if self.peers[pid].status is PeerStatus.ACTIVE:
                mask = kernels.range_mask(
                    self._lat, self._lon, np.array([pid], np.int64), self._active, cfg.range_m
                )[0]
                self.density.append((t, int(mask.sum())))
            else:
                self.density.append((t, 0))
        if self.density_by_peer is not None and self._active_ids:
            ids = np.array(sorted(self._active_ids), np.int64)
            masks = kernels.range_mask(self._lat, self._lon, ids, self._active, cfg.range_m)
            for row, pid in enumerate(ids):
                self.density_by_peer[int(pid)].append((t, int(masks[row].sum())))
        if cfg.record_tracks:
            for pid in self._active_ids:
                peer = self.peers[pid]
                self.tracks[pid].append((t, peer.position))

    def tick(self) -> None:
        t = self.clock
        self._activate_entrants(t)
        self._move_peers(t)
        outgoing, samplers = self._collect_broadcasts(t)
        replies = self._deliver_broadcasts(outgoing, t)
        self._deliver_replies(replies, samplers, t)
        self._expire(t)
        self._snapshot(t)
        self.clock = t + 1

    # -- results ----------------------------------------------------------

    def result(self) -> RunResult:
        n = len(self.peers)
        return RunResult(
            times=np.arange(self.config.duration_s + 1, dtype=np.int64),
            infected_counts=self._infected_series.copy(),
            n_peers=n,
            counters={k: v.copy() for k, v in self._counter_series.items()},
            expired_killed=self.expired_killed,
            reception_opportunities=self.reception_opportunities,
            reply_intents=self.reply_intents,
            density=list(self.density),
            density_by_peer=self.density_by_peer,
            contact_totals={p.peer_id: p.contacts.total_contacts() for p in self.peers},
            tracks=self.tracks,
            infection_times=dict(self.infection_times),
            last_sent=self.last_sent,
            last_received=self.last_received,
            config=self.echo(),
        )

    def echo(self) -> dict:
        cfg = self.config.echo()
        cfg["nodes"] = len(self.peers)
        return cfg


def run(config: SimConfig, scenario: Scenario) -> RunResult:
    """Execute one full run over ticks 0..duration inclusive."""
    config.validate()
    if scenario.is_empty():
        raise ConfigError("scenario is empty: no paths, fields or beacons")
    world = World(config, scenario)
    for _ in range(config.duration_s + 1):
        world.tick()
    return world.result()


def replication_seed(base_seed: int, rep: int) -> int:
    """Deterministic per-replication seed; replication 0 keeps the base."""
    if rep == 0:
        return base_seed
    return int(np.random.SeedSequence([base_seed, 3, rep]).generate_state(1, np.uint64)[0])


def run_replicated(
    config: SimConfig, n: Optional[int] = None, scenario: Optional[Scenario] = None
) -> tuple[list[RunResult], Aggregate]:
    """n independent runs with seeds derived from the base seed, plus the
    per-tick mean/stddev aggregate."""
    if scenario is None:
        raise ConfigError("run_replicated needs a scenario")
    reps = config.replications if n is None else n
    if reps < 1:
        raise ConfigError("need at least one replication")
    results = []
    for k in range(reps):
        cfg = replace(config, seed=replication_seed(config.seed, k))
        results.append(run(cfg, scenario))
    return results, aggregate_runs(results)
