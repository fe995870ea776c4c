import random
from dataclasses import replace

import numpy as np
import pytest

from mcpsim import (
    ConfigError,
    ContactEvent,
    KillPolicy,
    SimConfig,
    TraceParseError,
    parse_contacts,
    reachable_set,
    run_trace,
)


def ideal_config(duration=1000, period=1, seed=1, **kw):
    return SimConfig(
        duration_s=duration, period_s=period, share_probability=1.0,
        drop_probability=0.0, seed=seed, replications=1, **kw
    )


def infected_peers(result):
    return set(result.infection_times)


# --- parsing -------------------------------------------------------------------


def test_parse_basic_line():
    events, roster = parse_contacts("1 2 5 9\n")
    assert events == [ContactEvent(1, 2, 5, 9)]
    assert roster == [1, 2]


def test_parse_sorts_by_start_time():
    events, _ = parse_contacts("3 4 50 60\n1 2 5 9\n2 3 20 30\n")
    assert [e.t_start for e in events] == [5, 20, 50]


def test_parse_flags_column_preserved():
    events, _ = parse_contacts("1 2 5 9 internal-external\n")
    assert events[0].flags == "internal-external"


def test_parse_self_contact_rejected():
    with pytest.raises(TraceParseError) as err:
        parse_contacts("1 1 5 9\n")
    assert "line 1" in str(err.value)


def test_parse_reversed_interval_rejected():
    with pytest.raises(TraceParseError):
        parse_contacts("1 2 9 5\n")


def test_parse_non_integer_rejected():
    with pytest.raises(TraceParseError):
        parse_contacts("1 2 five 9\n")


def test_parse_comments_and_blanks_skipped():
    events, roster = parse_contacts("# header\n\n1 2 5 9\n")
    assert len(events) == 1


# --- replay --------------------------------------------------------------------


def test_single_contact_infects_neighbor():
    events, roster = parse_contacts("0 1 5 5\n")
    res = run_trace(ideal_config(), events, roster)
    assert infected_peers(res) == {0, 1}
    assert res.infection_times[1] == 5


def test_time_respecting_order_blocks_late_chain():
    # B meets C before A ever meets B, so C stays clean
    events, roster = parse_contacts("1 2 10 10\n0 1 20 20\n")
    res = run_trace(ideal_config(), events, roster)
    assert infected_peers(res) == {0, 1}


def test_empty_trace_keeps_only_seed():
    res = run_trace(ideal_config(duration=50), [], roster=[0, 1, 2])
    assert infected_peers(res) == {0}
    assert res.infected_counts[-1] == 1


def test_seed_peer_absent_is_config_error():
    events, roster = parse_contacts("0 1 5 5\n")
    with pytest.raises(ConfigError):
        run_trace(ideal_config(seed_peer_position=7), events, roster)


def test_chain_with_one_tick_rebroadcast_latency():
    # A-B at [5,9], then B-C at [10,12]: B starts rebroadcasting at 6
    events, roster = parse_contacts("0 1 5 9\n1 2 10 12\n")
    res = run_trace(ideal_config(), events, roster)
    assert infected_peers(res) == {0, 1, 2}
    assert res.infection_times == {0: 0, 1: 5, 2: 10}


def test_same_unit_contact_cannot_relay_through():
    # both contacts live only at unit 5: B hears A at 5 but rebroadcasts at 6
    events, roster = parse_contacts("0 1 5 5\n1 2 5 5\n")
    res = run_trace(ideal_config(), events, roster)
    assert infected_peers(res) == {0, 1}


def test_density_series_counts_active_edges():
    events, roster = parse_contacts("0 1 2 4\n0 2 3 3\n1 2 0 10\n")
    res = run_trace(ideal_config(duration=8), events, roster)
    density = dict(res.density)
    assert density[1] == 0
    assert density[2] == 1
    assert density[3] == 2
    assert density[5] == 0


def test_overlapping_intervals_for_same_pair_stack():
    events, roster = parse_contacts("0 1 0 5\n0 1 3 10\n")
    res = run_trace(ideal_config(duration=12), events, roster)
    density = dict(res.density)
    assert density[4] == 1  # still one distinct neighbor
    assert density[8] == 1  # second interval still active after the first ends
    assert density[11] == 0


def test_trace_horizon_clamps_to_last_event_plus_period():
    events, roster = parse_contacts("0 1 5 9\n")
    res = run_trace(ideal_config(duration=10**6, period=10), events, roster)
    assert res.times[-1] == 19


def test_trace_replay_deterministic():
    events, roster = parse_contacts("0 1 5 9\n1 2 10 12\n0 3 4 20\n")
    cfg = ideal_config(seed=77)
    a = run_trace(cfg, events, roster)
    b = run_trace(cfg, events, roster)
    np.testing.assert_array_equal(a.infected_counts, b.infected_counts)
    assert a.infection_times == b.infection_times


# --- oracle --------------------------------------------------------------------


def test_reachable_set_simple_chain():
    events, _ = parse_contacts("0 1 5 9\n1 2 10 12\n")
    assert reachable_set(events, 0, 1000) == {0, 1, 2}


def test_reachable_set_isolated_seed():
    events, _ = parse_contacts("1 2 5 9\n")
    assert reachable_set(events, 0, 1000) == {0}


def test_reachable_set_fully_connected_at_zero():
    events, _ = parse_contacts("0 1 0 100\n0 2 0 100\n1 3 0 100\n")
    assert reachable_set(events, 0, 1000) == {0, 1, 2, 3}


def test_reachable_set_respects_horizon():
    events, _ = parse_contacts("0 1 500 600\n")
    assert reachable_set(events, 0, 100) == {0}


def _random_trace(rng, n_peers, n_events, t_max=60):
    lines = []
    for _ in range(n_events):
        a = rng.randrange(n_peers)
        b = rng.randrange(n_peers)
        while b == a:
            b = rng.randrange(n_peers)
        t0 = rng.randrange(t_max)
        t1 = t0 + rng.randrange(6)
        lines.append(f"{a} {b} {t0} {t1}")
    return parse_contacts("\n".join(lines))


def test_oracle_equivalence_on_random_traces():
    rng = random.Random(2024)
    for trial in range(100):
        n_peers = rng.randrange(3, 21)
        n_events = rng.randrange(1, 201)
        events, roster = _random_trace(rng, n_peers, n_events)
        horizon = min(10_000, max(e.t_end for e in events) + 1)
        res = run_trace(ideal_config(duration=10_000), events, roster)
        oracle = reachable_set(events, roster[0], horizon)
        assert infected_peers(res) == oracle, f"trial {trial}"


def test_period_slack_only_delays():
    rng = random.Random(99)
    for trial in range(40):
        events, roster = _random_trace(rng, rng.randrange(3, 12), rng.randrange(1, 60))
        horizon = max(e.t_end for e in events) + 10
        for period in (2, 3, 5):
            res = run_trace(ideal_config(duration=10_000, period=period), events, roster)
            assert infected_peers(res) <= reachable_set(events, roster[0], horizon)
            # the period-aware oracle is exact, not just an upper bound
            assert infected_peers(res) == reachable_set(
                events, roster[0], horizon, period=period
            ), f"trial {trial} period {period}"


def test_trace_kill_ttl_limits_spread():
    events, roster = parse_contacts("0 1 5 5\n1 2 700 700\n")
    alive = run_trace(ideal_config(duration=800), events, roster)
    assert infected_peers(alive) == {0, 1, 2}
    killed = run_trace(
        ideal_config(duration=800, kill=KillPolicy(expires_at=600.0)), events, roster
    )
    assert infected_peers(killed) == {0, 1}
