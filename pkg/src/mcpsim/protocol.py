"""Market Contact Protocol core: messages, policies, peer state machines.

Sellers announce stored content periodically (Simple mode) or probe the
neighborhood with a Sample and broadcast only when enough replies come back
(Extended mode). Buyers count contacts, decide once per message whether to
act as a proxy, and store-and-forward accepted content under its kill
policy.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .geo import WayPoint
from .mobility import FieldSpec, MotionState, PathSpec, Role


class MessageKind(Enum):
    CONTENT = "content"
    SAMPLE = "sample"
    SAMPLE_REPLY = "sample_reply"


class IncentiveKind(Enum):
    ALTRUISTIC = "altruistic"
    PAYMENT = "payment"


class ProtocolMode(Enum):
    SIMPLE = "simple"
    EXTENDED = "extended"


@dataclass(frozen=True)
class Incentive:
    kind: IncentiveKind = IncentiveKind.ALTRUISTIC
    amount: float = 0.0
    currency: str = "GBP"

    def __post_init__(self) -> None:
        if self.kind is IncentiveKind.PAYMENT and self.amount < 0:
            raise ValueError("payment amount must be non-negative")


@dataclass(frozen=True)
class KillPolicy:
    """Message lifetime bounds: a forward-hop budget and an absolute expiry.

    ``hops_remaining`` is None for an unlimited forward budget and
    ``expires_at`` is None for a message that never expires. ``hops_expire``
    mirrors the documented wire schema but carries no runtime semantics.
    """

    hops_remaining: Optional[int] = None
    expires_at: Optional[float] = None
    hops_expire: Optional[int] = None

    def __post_init__(self) -> None:
        if self.hops_remaining is not None and self.hops_remaining < 0:
            raise ValueError("hop budget must be non-negative")


@dataclass(frozen=True)
class Originator:
    """The message creator's identity and out-of-band contact card."""

    peer_id: int
    imei: str = ""
    phone: str = ""
    email: str = ""


@dataclass(frozen=True)
class SaleItem:
    descript: str = ""
    price: str = ""
    expires: str = ""


@dataclass(frozen=True)
class Payload:
    content: str = ""
    size_bytes: Optional[int] = None
    item: Optional[SaleItem] = None

    @property
    def declared_size(self) -> int:
        if self.size_bytes is not None:
            return self.size_bytes
        return len(self.content.encode("utf-8"))


@dataclass
class PeerValueFactors:
    contacts_seen: int = 0
    distance_traveled_m: float = 0.0
    ratings_received: int = 0
    transactions_done: int = 0


DEFAULT_VALUE_WEIGHTS = (1.0, 0.0, 0.0, 0.0)


def peer_value(factors: PeerValueFactors, weights=DEFAULT_VALUE_WEIGHTS) -> float:
    """Weighted sum of the four carrier-worth factors.

    The default weights reduce peer value to contacts seen; a peer that
    hears many others is the more valuable carrier.
    """
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    w0, w1, w2, w3 = weights
    return (
        w0 * factors.contacts_seen
        + w1 * factors.distance_traveled_m
        + w2 * factors.ratings_received
        + w3 * factors.transactions_done
    )


_msg_ids = itertools.count()


@dataclass
class Message:
    """The unit of dissemination.

    The originator never changes as a message is forwarded; ``sender`` is
    the immediate broadcaster and changes per hop. Samples and sample
    replies reuse the same record with their own kind.
    """

    msg_id: int
    originator: Originator
    payload: Payload
    incentive: Incentive
    kill: KillPolicy
    kind: MessageKind = MessageKind.CONTENT
    sender: int = -1
    created_at: int = 0
    addressed_to: Optional[int] = None
    factors: Optional[PeerValueFactors] = None


def make_message(
    originator: Originator,
    payload: Payload,
    incentive: Incentive,
    kill: KillPolicy,
    *,
    msg_id: Optional[int] = None,
    created_at: int = 0,
) -> Message:
    """A fresh Content message, initially sent by its originator."""
    if msg_id is None:
        msg_id = next(_msg_ids)
    return Message(
        msg_id=msg_id,
        originator=originator,
        payload=payload,
        incentive=incentive,
        kill=kill,
        kind=MessageKind.CONTENT,
        sender=originator.peer_id,
        created_at=created_at,
    )


def apply_kill(msg: Message, clock: float) -> bool:
    """True while the message may still be (re)broadcast."""
    if msg.kill.hops_remaining is not None and msg.kill.hops_remaining <= 0:
        return False
    if msg.kill.expires_at is not None and clock >= msg.kill.expires_at:
        return False
    return True


@dataclass
class SellerPolicy:
    period_s: int = 60
    mode: ProtocolMode = ProtocolMode.SIMPLE
    threshold: Optional[int] = None
    broadcast_budget: Optional[int] = None

    def __post_init__(self) -> None:
        if self.period_s < 1:
            raise ValueError("broadcast period must be >= 1 second")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be non-negative")


@dataclass
class BuyerPolicy:
    share_probability: float = 1.0
    reply_to_samples: bool = True
    accept_filter: Optional[Callable[[Message], bool]] = None
    purchase_filter: Optional[Callable[[Message], bool]] = None
    # share decisions are made once per message and cached here
    _decisions: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.share_probability <= 1.0:
            raise ValueError("share probability must lie in [0, 1]")


def decide_share(policy: BuyerPolicy, msg: Message, rng: np.random.Generator) -> bool:
    """Bernoulli proxying decision, cached so a peer never flip-flops."""
    cached = policy._decisions.get(msg.msg_id)
    if cached is not None:
        return cached
    ok = policy.accept_filter is None or policy.accept_filter(msg)
    share = bool(ok and rng.random() < policy.share_probability)
    policy._decisions[msg.msg_id] = share
    return share


def threshold_gate(reply_count: int, policy: SellerPolicy) -> bool:
    """Extended-mode gate: broadcast only when enough peers replied."""
    return reply_count >= (policy.threshold or 0)


@dataclass
class ContactRecord:
    count: int = 0
    last_seen: int = 0
    last_coords: Optional[WayPoint] = None


class ContactDatabase:
    """Per-peer contact counters plus the store of carried messages."""

    def __init__(self) -> None:
        self.records: dict[int, ContactRecord] = {}
        self.stored_messages: dict[int, Message] = {}
        self.ratings: int = 0
        self.transactions: int = 0

    def record_contact(self, peer_id: int, clock: int, coords: Optional[WayPoint] = None) -> None:
        rec = self.records.get(peer_id)
        if rec is None:
            rec = self.records[peer_id] = ContactRecord()
        rec.count += 1
        rec.last_seen = clock
        if coords is not None:
            rec.last_coords = coords

    def total_contacts(self) -> int:
        return sum(rec.count for rec in self.records.values())


class PeerStatus(Enum):
    PENDING = "pending"
    ACTIVE = "active"
    EXITED = "exited"


@dataclass
class PeerState:
    """One mobile or static peer with its policies and protocol state."""

    peer_id: int
    role: Role
    position: WayPoint
    motion: MotionState
    seller: SellerPolicy
    buyer: BuyerPolicy
    path: Optional[PathSpec] = None
    field_spec: Optional[FieldSpec] = None
    enter_at_s: float = 0.0
    entry_time: int = 0
    status: PeerStatus = PeerStatus.PENDING
    contacts: ContactDatabase = field(default_factory=ContactDatabase)
    factors: PeerValueFactors = field(default_factory=PeerValueFactors)
    infected_at: dict = field(default_factory=dict)  # msg_id -> first receipt tick
    broadcasts_done: dict = field(default_factory=dict)  # msg_id -> times broadcast
    awaiting_gate: bool = False
    sample_replies: int = 0
    pending_content_at: Optional[int] = None

    @property
    def is_infected(self) -> bool:
        return bool(self.infected_at)


def _live_messages(peer: PeerState, clock: int) -> list[Message]:
    live = [m for m in peer.contacts.stored_messages.values() if apply_kill(m, clock)]
    budget = peer.seller.broadcast_budget
    if budget is not None:
        live = [m for m in live if peer.broadcasts_done.get(m.msg_id, 0) < budget]
    return live


def _content_broadcasts(peer: PeerState, live: list[Message]) -> list[Message]:
    out = []
    for msg in live:
        peer.broadcasts_done[msg.msg_id] = peer.broadcasts_done.get(msg.msg_id, 0) + 1
        out.append(replace(msg, sender=peer.peer_id, kind=MessageKind.CONTENT))
    return out


def seller_tick(peer: PeerState, clock: int) -> list[Message]:
    """Broadcasts due this tick for one peer.

    Simple mode emits every live stored message at each period boundary.
    Extended mode emits a single Sample at the boundary instead; content
    follows one tick later if the threshold gate passed in the meantime.
    """
    out: list[Message] = []
    if peer.pending_content_at == clock:
        peer.pending_content_at = None
        out.extend(_content_broadcasts(peer, _live_messages(peer, clock)))
    live = _live_messages(peer, clock)
    if live and (clock - peer.entry_time) % peer.seller.period_s == 0:
        if peer.seller.mode is ProtocolMode.SIMPLE:
            out.extend(_content_broadcasts(peer, live))
        else:
            out.append(
                Message(
                    msg_id=next(_msg_ids),
                    originator=Originator(peer_id=peer.peer_id),
                    payload=Payload(),
                    incentive=Incentive(),
                    kill=KillPolicy(),
                    kind=MessageKind.SAMPLE,
                    sender=peer.peer_id,
                    created_at=clock,
                )
            )
            peer.awaiting_gate = True
            peer.sample_replies = 0
    return out


@dataclass
class ReceiveOutcome:
    newly_infected: bool = False
    stored: bool = False
    redundant: bool = False
    reply: Optional[Message] = None
    reply_intent: bool = False
    counted_reply: bool = False


def on_receive(
    peer: PeerState, msg: Message, clock: int, rng: np.random.Generator
) -> ReceiveOutcome:
    """Apply the buyer state machine to one received broadcast.

    Every receipt performs one-way contact counting against the immediate
    sender. Content may infect and be stored for forwarding with its hop
    budget decremented; Samples draw a reply carrying this peer's value
    factors; SampleReplies feed the addressee's gate tally.
    """
    out = ReceiveOutcome()
    peer.contacts.record_contact(msg.sender, clock)
    peer.factors.contacts_seen += 1
    if msg.kind is MessageKind.CONTENT:
        if msg.msg_id in peer.infected_at:
            out.redundant = True
            return out
        peer.infected_at[msg.msg_id] = clock
        out.newly_infected = True
        if peer.buyer.purchase_filter is not None and peer.buyer.purchase_filter(msg):
            out.reply_intent = True  # recorded as a statistic only; no reply traffic
        hops = msg.kill.hops_remaining
        can_forward = hops is None or hops >= 1
        if can_forward and decide_share(peer.buyer, msg, rng):
            stored = replace(
                msg,
                kill=replace(msg.kill, hops_remaining=None if hops is None else hops - 1),
            )
            peer.contacts.stored_messages[msg.msg_id] = stored
            out.stored = True
    elif msg.kind is MessageKind.SAMPLE:
        if peer.buyer.reply_to_samples:
            out.reply = Message(
                msg_id=next(_msg_ids),
                originator=Originator(peer_id=peer.peer_id),
                payload=Payload(),
                incentive=Incentive(),
                kill=KillPolicy(),
                kind=MessageKind.SAMPLE_REPLY,
                sender=peer.peer_id,
                created_at=clock,
                addressed_to=msg.sender,
                factors=replace(peer.factors),
            )
    elif msg.kind is MessageKind.SAMPLE_REPLY:
        if msg.addressed_to == peer.peer_id and peer.awaiting_gate:
            peer.sample_replies += 1
            out.counted_reply = True
    return out


def expire_messages(peer: PeerState, clock: int) -> int:
    """Drop stored messages whose kill policy has fired; returns the count.

    Infection status of peers that already hold the content is unchanged.
    """
    dead = [mid for mid, m in peer.contacts.stored_messages.items() if not apply_kill(m, clock)]
    for mid in dead:
        del peer.contacts.stored_messages[mid]
    return len(dead)


# --- debug round-trip to the documented four-tag wire schema ---------------

_XML_FIELDS = (
    "IMEI number",
    "phone number",
    "email",
    "descript",
    "price",
    "expires",
    "payment",
    "currency",
    "hopcount",
    "hopsexpire",
    "date",
)


def message_to_xml(msg: Message) -> str:
    """Render a message in the four-tag debug schema (originator, payload,
    incentive, kill). The tag names, including the space-bearing ones,
    follow the documented layout verbatim."""
    item = msg.payload.item or SaleItem()
    o = msg.originator
    k = msg.kill
    payment = "" if msg.incentive.kind is IncentiveKind.ALTRUISTIC else repr(msg.incentive.amount)
    hopcount = "" if k.hops_remaining is None else str(k.hops_remaining)
    hopsexpire = "" if k.hops_expire is None else str(k.hops_expire)
    date = "" if k.expires_at is None else repr(float(k.expires_at))
    return "\n".join(
        [
            "<message>",
            "  <originator>",
            f"    <IMEI number>{o.imei}</IMEI number>",
            f"    <phone number>{o.phone}</phone number>",
            f"    <email>{o.email}</email>",
            "  </originator>",
            "  <payload>",
            "    <selling>",
            "      <item>",
            f"        <descript>{item.descript}</descript>",
            f"        <price>{item.price}</price>",
            f"        <expires>{item.expires}</expires>",
            "      </item>",
            "    </selling>",
            "  </payload>",
            "  <incentive>",
            f"    <payment>{payment}</payment>",
            f"    <currency>{msg.incentive.currency}</currency>",
            "  </incentive>",
            "  <kill>",
            f"    <hopcount>{hopcount}</hopcount>",
            f"    <hopsexpire>{hopsexpire}</hopsexpire>",
            f"    <date>{date}</date>",
            "  </kill>",
            "</message>",
        ]
    )


def _xml_tag(text: str, tag: str) -> str:
    m = re.search(f"<{re.escape(tag)}>(.*?)</{re.escape(tag)}>", text, re.DOTALL)
    return m.group(1).strip() if m else ""


def message_from_xml(text: str, *, peer_id: int = 0) -> Message:
    """Parse the debug schema back into a Message (fresh id, Content kind)."""
    vals = {tag: _xml_tag(text, tag) for tag in _XML_FIELDS}
    payment = vals["payment"]
    incentive = (
        Incentive(IncentiveKind.PAYMENT, float(payment))
        if payment
        else Incentive(IncentiveKind.ALTRUISTIC)
    )
    if vals["currency"]:
        incentive = replace(incentive, currency=vals["currency"])
    kill = KillPolicy(
        hops_remaining=int(vals["hopcount"]) if vals["hopcount"] else None,
        expires_at=float(vals["date"]) if vals["date"] else None,
        hops_expire=int(vals["hopsexpire"]) if vals["hopsexpire"] else None,
    )
    item = SaleItem(vals["descript"], vals["price"], vals["expires"])
    payload = Payload(item=item) if any((item.descript, item.price, item.expires)) else Payload()
    originator = Originator(
        peer_id=peer_id, imei=vals["IMEI number"], phone=vals["phone number"], email=vals["email"]
    )
    return make_message(originator, payload, incentive, kill)
