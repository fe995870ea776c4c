"""Market Contact Protocol simulator.

A deterministic discrete-time simulator and protocol library for
opportunistic content sharing between mobile peers: Simple MCP (periodic
broadcasts) and Extended MCP (threshold-gated broadcasts after neighbor
sampling) over generated geographic mobility or replayed contact traces,
with statistics, logistic-growth fitting, CSV reports and KML tracks.
"""

from .geo import EARTH_RADIUS_M, Polyline, WayPoint, advance_along, great_circle_distance, interpolate, offset_point
from .mobility import (
    FieldSpec,
    IrregularParams,
    MapData,
    MapParseError,
    MobilityMode,
    MotionKind,
    MotionState,
    PathSpec,
    PeerSpawn,
    Role,
    build_grid,
    make_bidirectional,
    parse_map,
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
    IncentiveKind,
    KillPolicy,
    Message,
    MessageKind,
    Originator,
    Payload,
    PeerState,
    PeerValueFactors,
    ProtocolMode,
    SaleItem,
    SellerPolicy,
    apply_kill,
    decide_share,
    make_message,
    message_from_xml,
    message_to_xml,
    on_receive,
    peer_value,
    seller_tick,
    threshold_gate,
)
from .engine import ConfigError, Scenario, SimConfig, World, run, run_replicated
from .traces import ContactEvent, TraceParseError, parse_contacts, reachable_set, run_trace
from .stats import (
    Aggregate,
    FitError,
    LogisticParams,
    RunResult,
    aggregate_runs,
    emit_csv,
    emit_kml,
    fit_logistic,
    logistic_map_iterate,
    logistic_value,
    parse_csv,
)

__version__ = "0.1.0"
