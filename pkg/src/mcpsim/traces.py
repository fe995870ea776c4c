"""Contact-trace replay: drive the protocol from recorded contact events.

The normalized trace format is one contact interval per line,
``id_a id_b t_start t_end [flags]``, with ``#`` comments. Time is whatever
opaque integer unit the trace was recorded in; a broadcast reaches all
peers whose contact interval with the sender covers the broadcasting unit.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .engine import ConfigError, SimConfig
from .protocol import (
    BuyerPolicy,
    Incentive,
    Message,
    MessageKind,
    Originator,
    Payload,
    PeerState,
    PeerStatus,
    Role,
    SellerPolicy,
    make_message,
    on_receive,
    expire_messages,
    seller_tick,
    threshold_gate,
)
from .mobility import MotionKind, MotionState
from .geo import WayPoint
from .stats import COUNTER_NAMES, RunResult


class TraceParseError(ValueError):
    """A trace line that does not match the normalized format."""


@dataclass(frozen=True)
class ContactEvent:
    """One symmetric contact interval between two peers."""

    a: int
    b: int
    t_start: int
    t_end: int
    flags: str = ""

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("self-contact")
        if self.t_start > self.t_end:
            raise ValueError("contact ends before it starts")
        if self.a < 0 or self.b < 0:
            raise ValueError("peer ids must be non-negative")


def parse_contacts(text: str) -> tuple[list[ContactEvent], list[int]]:
    """Parse a normalized trace into (events sorted by start, sorted roster)."""
    events: list[ContactEvent] = []
    roster: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise TraceParseError(f"line {lineno}: expected 'id_a id_b t_start t_end [flags]'")
        try:
            a, b, t0, t1 = (int(p) for p in parts[:4])
        except ValueError:
            raise TraceParseError(f"line {lineno}: non-integer field in {parts[:4]}") from None
        flags = parts[4] if len(parts) == 5 else ""
        try:
            events.append(ContactEvent(a, b, t0, t1, flags))
        except ValueError as exc:
            raise TraceParseError(f"line {lineno}: {exc}") from exc
        roster.add(a)
        roster.add(b)
    events.sort(key=lambda e: (e.t_start, e.t_end, e.a, e.b))
    return events, sorted(roster)


def _resolve_seed_peer(position: str | int, roster: Sequence[int]) -> int:
    if position == "first":
        return roster[0]
    if position == "middle":
        return roster[len(roster) // 2]
    if position == "last":
        return roster[-1]
    if isinstance(position, int):
        if position not in roster:
            raise ConfigError(f"seed peer {position} not in roster")
        return position
    raise ConfigError(f"bad seed peer position {position!r}")


def run_trace(
    config: SimConfig, events: Sequence[ContactEvent], roster: Optional[Sequence[int]] = None
) -> RunResult:
    """Replay the protocol over contact events instead of geometry.

    All roster peers exist from unit 0; one seeding seller broadcasts on
    the configured period, proxies likewise once infected, and deliveries
    follow whichever edges are active at the broadcasting unit. The run
    spans min(duration, last contact end + one period) units.
    """
    config.validate()
    if roster is None:
        roster = sorted({p for e in events for p in (e.a, e.b)})
    roster = sorted(roster)
    if not roster:
        raise ConfigError("trace roster is empty")
    seed_pid = _resolve_seed_peer(config.seed_peer_position, roster)

    horizon = min(
        config.duration_s, (max((e.t_end for e in events), default=0) + config.period_s)
    )
    nowhere = WayPoint(0.0, 0.0)  # traces carry no geometry
    peers: dict[int, PeerState] = {}
    for pid in roster:
        role = Role.SELLER if pid == seed_pid else Role.BUYER
        peers[pid] = PeerState(
            peer_id=pid,
            role=role,
            position=nowhere,
            motion=MotionState(kind=MotionKind.STATIC),
            seller=SellerPolicy(
                period_s=config.period_s, mode=config.mode, threshold=config.threshold
            ),
            buyer=BuyerPolicy(share_probability=config.share_probability),
            status=PeerStatus.ACTIVE,
        )

    rngs: dict[int, np.random.Generator] = {}

    def peer_rng(pid: int) -> np.random.Generator:
        rng = rngs.get(pid)
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, pid]))
            rngs[pid] = rng
        return rng

    world_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))

    # seed message exists from unit 0, so its relative TTL is already absolute
    seed_peer = peers[seed_pid]
    msg = make_message(
        Originator(peer_id=seed_pid),
        Payload(content=f"content of peer {seed_pid}"),
        Incentive(),
        replace(config.kill),
        created_at=0,
    )
    seed_peer.contacts.stored_messages[msg.msg_id] = msg
    seed_peer.infected_at[msg.msg_id] = 0

    starts: dict[int, list[ContactEvent]] = defaultdict(list)
    ends: dict[int, list[ContactEvent]] = defaultdict(list)
    for e in events:
        if e.t_start <= horizon:
            starts[e.t_start].append(e)
            ends[min(e.t_end, horizon)].append(e)
    # overlapping intervals for one pair must stack, so edges are counted
    link_count: dict[int, dict[int, int]] = {pid: defaultdict(int) for pid in roster}

    def _link(a: int, b: int, delta: int) -> None:
        for u, v in ((a, b), (b, a)):
            link_count[u][v] += delta
            if link_count[u][v] <= 0:
                del link_count[u][v]

    def neighbors_of(pid: int) -> list[int]:
        return sorted(link_count[pid])

    ticks = horizon + 1
    infected_series = np.zeros(ticks, dtype=np.int64)
    counter_series = {name: np.zeros(ticks, dtype=np.int64) for name in COUNTER_NAMES}
    running = dict.fromkeys(COUNTER_NAMES, 0)
    infection_times = {seed_pid: 0}
    expired_killed = 0
    opportunities = 0
    reply_intents = 0
    last_sent: Optional[int] = None
    last_received: Optional[int] = None
    density: list[tuple[int, int]] = []
    carriers: set[int] = {seed_pid}

    for t in range(ticks):
        for e in starts.get(t, ()):
            _link(e.a, e.b, +1)

        outgoing: list[tuple[int, Message]] = []
        samplers: list[int] = []
        for pid in sorted(carriers):
            for m in seller_tick(peers[pid], t):
                outgoing.append((pid, m))
                if m.kind is MessageKind.SAMPLE:
                    samplers.append(pid)
                    running["sample_sent"] += 1
                else:
                    running["content_sent"] += 1
                last_sent = t

        replies: list[tuple[int, Message]] = []
        for sid, m in outgoing:
            neighbors = neighbors_of(sid)
            opportunities += len(neighbors)
            if config.drop_probability > 0.0 and neighbors:
                u = world_rng.random(len(neighbors))
                kept = [pid for pid, ui in zip(neighbors, u) if ui >= config.drop_probability]
                running["dropped"] += len(neighbors) - len(kept)
                neighbors = kept
            for rid in neighbors:
                outcome = on_receive(peers[rid], m, t, peer_rng(rid))
                running["delivered"] += 1
                last_received = t
                if outcome.redundant:
                    running["redundant"] += 1
                if outcome.newly_infected and rid not in infection_times:
                    infection_times[rid] = t
                if outcome.stored:
                    carriers.add(rid)
                if outcome.reply is not None:
                    replies.append((rid, outcome.reply))
                if outcome.reply_intent:
                    reply_intents += 1

        for rid, reply in replies:
            running["reply_sent"] += 1
            last_sent = t
            addr = reply.addressed_to
            targets = neighbors_of(rid) if config.bystander_counting else (
                [addr] if addr in link_count[rid] else []
            )
            opportunities += len(targets)
            for rid2 in targets:
                if config.drop_probability > 0.0 and world_rng.random() < config.drop_probability:
                    running["dropped"] += 1
                    continue
                outcome = on_receive(peers[rid2], reply, t, peer_rng(rid2))
                running["delivered"] += 1
                last_received = t
        for pid in samplers:
            peer = peers[pid]
            if peer.awaiting_gate:
                peer.awaiting_gate = False
                if threshold_gate(peer.sample_replies, peer.seller):
                    peer.pending_content_at = t + 1

        for pid in sorted(carriers):
            expired_killed += expire_messages(peers[pid], t)
        carriers = {pid for pid in carriers if peers[pid].contacts.stored_messages}

        infected_series[t] = len(infection_times)
        for name in COUNTER_NAMES:
            counter_series[name][t] = running[name]
        density.append((t, len(link_count[seed_pid])))

        for e in ends.get(t, ()):
            _link(e.a, e.b, -1)

    cfg = config.echo()
    cfg["nodes"] = len(roster)
    return RunResult(
        times=np.arange(ticks, dtype=np.int64),
        infected_counts=infected_series,
        n_peers=len(roster),
        counters=counter_series,
        expired_killed=expired_killed,
        reception_opportunities=opportunities,
        reply_intents=reply_intents,
        density=density,
        contact_totals={pid: peers[pid].contacts.total_contacts() for pid in roster},
        infection_times=infection_times,
        last_sent=last_sent,
        last_received=last_received,
        config=cfg,
    )


def reachable_set(
    events: Sequence[ContactEvent],
    seed_peer: int,
    t_end: int,
    period: int = 1,
) -> set[int]:
    """Brute-force temporal reachability from a seed over contact chains.

    A carrier infected at time T rebroadcasts at multiples of ``period``
    strictly after T (the seed broadcasts from 0), so peer B is reachable
    through a contact [s, e] with carrier A iff some broadcast unit falls in
    [max(s, start_A), min(e, t_end)]. Forward sweeps repeat to a fixpoint.
    """
    infected = {seed_peer: 0}
    ordered = sorted(events, key=lambda e: (e.t_start, e.t_end, e.a, e.b))
    changed = True
    while changed:
        changed = False
        for e in ordered:
            for u, v in ((e.a, e.b), (e.b, e.a)):
                if u not in infected:
                    continue
                start = 0 if u == seed_peer else infected[u] + 1
                lo = max(e.t_start, start)
                hi = min(e.t_end, t_end)
                if lo > hi:
                    continue
                # first broadcast unit (multiple of period) in [lo, hi]
                t_hit = ((lo + period - 1) // period) * period
                if t_hit > hi:
                    continue
                if v not in infected or t_hit < infected[v]:
                    infected[v] = t_hit
                    changed = True
    return set(infected)
