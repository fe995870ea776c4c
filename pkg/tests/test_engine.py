from dataclasses import replace

import numpy as np
import pytest

from mcpsim import (
    ConfigError,
    FieldSpec,
    KillPolicy,
    ProtocolMode,
    Scenario,
    SimConfig,
    WayPoint,
    World,
    emit_csv,
    parse_map,
    run,
    run_replicated,
)

ANCHOR = WayPoint(51.4983, -0.1791)
LONDON_MAP = "U (51.501427, -0.180414) | (51.492243, -0.178214) S 1 B 100"


def london_scenario(buyers=100):
    text = LONDON_MAP.replace("B 100", f"B {buyers}")
    return Scenario.from_map(parse_map(text))


def tiny_field(n=2, side=5.0, sellers=1):
    return Scenario(field_areas=[FieldSpec(side, n, ANCHOR)], field_sellers=sellers)


# --- config validation --------------------------------------------------------


def test_zero_duration_rejected():
    with pytest.raises(ConfigError):
        run(SimConfig(duration_s=0), tiny_field())


def test_extended_without_threshold_rejected():
    with pytest.raises(ConfigError):
        SimConfig(mode=ProtocolMode.EXTENDED).validate()


def test_empty_scenario_rejected():
    with pytest.raises(ConfigError):
        run(SimConfig(duration_s=10), Scenario())


def test_bad_probabilities_rejected():
    with pytest.raises(ConfigError):
        SimConfig(share_probability=1.5).validate()
    with pytest.raises(ConfigError):
        SimConfig(drop_probability=-0.1).validate()


# --- delivery ------------------------------------------------------------------


def _one_tick_world(n, side, drop=0.0, seed=1):
    cfg = SimConfig(
        duration_s=1, range_m=10.0, period_s=1, max_speed_mps=0.0,
        drop_probability=drop, seed=seed, replications=1,
    )
    return World(cfg, tiny_field(n=n, side=side))


def test_two_peers_in_range_delivered():
    world = _one_tick_world(2, side=5.0)
    world.tick()
    assert world.infected_total == 2  # seller plus the one receiver


def test_out_of_range_not_delivered():
    # 600 m square, 2 peers: far apart with overwhelming probability
    world = _one_tick_world(2, side=600.0, seed=3)
    world.tick()
    assert world.infected_total == 1


def test_fault_injection_binomial_band():
    # 1000 receivers all in range, drop 0.25: expect 750 +- 40 deliveries
    cfg = SimConfig(
        duration_s=1, range_m=50.0, period_s=1, max_speed_mps=0.0,
        drop_probability=0.25, seed=5, replications=1,
    )
    world = World(cfg, tiny_field(n=1001, side=20.0))
    world.tick()
    delivered = world._running["delivered"]
    dropped = world._running["dropped"]
    assert delivered + dropped == world.reception_opportunities
    assert world.reception_opportunities == 1000
    assert abs(delivered - 750) <= 40


def test_sender_never_hears_itself():
    world = _one_tick_world(1, side=5.0)
    world.tick()
    assert world._running["delivered"] == 0


# --- stepping ------------------------------------------------------------------


def test_empty_world_clock_advances():
    cfg = SimConfig(duration_s=5)
    world = World(cfg, Scenario())
    world.tick()
    world.tick()
    assert world.clock == 2
    assert world.infected_total == 0


def test_buyer_infected_at_first_period_tick():
    # static seller and buyer a few meters apart: infection lands at tick 0
    cfg = SimConfig(duration_s=5, range_m=10.0, period_s=60, max_speed_mps=0.0,
                    seed=2, replications=1)
    res = run(cfg, tiny_field(n=2, side=5.0))
    assert res.infected_counts[0] == 2
    assert res.infection_times != {}


def test_same_seed_bit_identical_run_results():
    cfg = SimConfig(duration_s=600, seed=42, replications=1)
    scn = london_scenario(buyers=20)
    a = run(cfg, scn)
    b = run(cfg, scn)
    assert emit_csv(a) == emit_csv(b)
    np.testing.assert_array_equal(a.infected_counts, b.infected_counts)
    assert a.infection_times == b.infection_times


def test_different_seed_changes_random_scenarios():
    cfg1 = SimConfig(duration_s=300, period_s=1, share_probability=0.5, seed=1, replications=1)
    cfg2 = replace(cfg1, seed=2)
    scn = Scenario(field_areas=[FieldSpec(150.0, 30, ANCHOR)])
    a = run(cfg1, scn)
    b = run(cfg2, scn)
    assert emit_csv(a) != emit_csv(b)


def test_infection_series_is_monotone():
    cfg = SimConfig(duration_s=900, period_s=10, share_probability=0.7, seed=9, replications=1)
    res = run(cfg, Scenario(field_areas=[FieldSpec(100.0, 40, ANCHOR)]))
    assert np.all(np.diff(res.infected_counts) >= 0)
    assert np.all(res.infected_fraction <= 1.0)


def test_counters_are_cumulative_and_conserved():
    cfg = SimConfig(duration_s=600, period_s=5, share_probability=0.5,
                    drop_probability=0.2, seed=4, replications=1)
    res = run(cfg, Scenario(field_areas=[FieldSpec(80.0, 30, ANCHOR)]))
    for name, series in res.counters.items():
        assert np.all(np.diff(series) >= 0), name
    totals = res.totals
    assert totals["delivered"] + totals["dropped"] == res.reception_opportunities
    n = res.n_peers
    assert totals["delivered"] <= res.total_sent * (n - 1)


def test_range_audit_never_exceeds_range():
    cfg = SimConfig(duration_s=300, period_s=5, seed=8, replications=1,
                    audit_deliveries=True)
    scn = Scenario(field_areas=[FieldSpec(60.0, 20, ANCHOR)])
    world = World(cfg, scn)
    for _ in range(cfg.duration_s + 1):
        world.tick()
    assert world.audit_log, "expected deliveries in a dense field"
    assert all(dist <= cfg.range_m for _, _, _, dist in world.audit_log)


def test_contact_count_soundness():
    # one-way counting: every peer's contact-count total equals the
    # number of broadcasts it received
    cfg = SimConfig(duration_s=400, period_s=7, share_probability=0.5, seed=6,
                    replications=1)
    scn = Scenario(field_areas=[FieldSpec(70.0, 25, ANCHOR)])
    world = World(cfg, scn)
    for _ in range(cfg.duration_s + 1):
        world.tick()
    res = world.result()
    assert sum(res.contact_totals.values()) == res.totals["delivered"]


def test_hold_at_end_keeps_peers_active():
    scn = london_scenario(buyers=3)
    cfg = SimConfig(duration_s=1200, seed=1, replications=1, hold_at_end=True)
    world = World(cfg, scn)
    for _ in range(cfg.duration_s + 1):
        world.tick()
    assert int(world._active.sum()) == 4  # everyone held at the far end
    cfg2 = replace(cfg, hold_at_end=False)
    world2 = World(cfg2, scn)
    for _ in range(cfg2.duration_s + 1):
        world2.tick()
    assert int(world2._active.sum()) == 0  # everyone walked off the end


def test_beacon_acts_as_static_relay():
    # seller walks past a beacon; a later entrant picks the content up from it
    text = (
        "U (51.4983, -0.1791) | (51.4983, -0.1762) S 1 B 1\n"
        "BEACON (51.4983, -0.17765)\n"
    )
    scn = Scenario.from_map(parse_map(text))
    # huge interval: the buyer enters long after the seller has passed the beacon
    cfg = SimConfig(duration_s=420, range_m=10.0, period_s=10, interval_m=150.0,
                    seed=5, replications=1, kill=KillPolicy())
    res = run(cfg, scn)
    assert res.infected_counts[-1] == 3  # seller, beacon, late buyer


def test_kill_ttl_stops_broadcasts():
    cfg = SimConfig(duration_s=900, period_s=10, seed=1, replications=1,
                    kill=KillPolicy(expires_at=100.0))
    scn = london_scenario(buyers=5)
    res = run(cfg, scn)
    content = res.counters["content_sent"]
    assert content[-1] == content[150]  # nothing sent after expiry
    assert res.expired_killed > 0


def test_replication_aggregate_basics():
    cfg = SimConfig(duration_s=120, period_s=10, seed=11, replications=1)
    scn = tiny_field(n=5, side=30.0)
    results, agg = run_replicated(cfg, 1, scn)
    assert len(results) == 1
    np.testing.assert_array_equal(
        agg.mean["infected_count"], results[0].infected_counts.astype(float)
    )
    assert np.all(agg.std["infected_count"] == 0.0)


def test_replications_differ_but_are_reproducible():
    cfg = SimConfig(duration_s=200, period_s=5, share_probability=0.5, seed=11)
    scn = Scenario(field_areas=[FieldSpec(100.0, 20, ANCHOR)])
    results1, agg1 = run_replicated(cfg, 3, scn)
    results2, agg2 = run_replicated(cfg, 3, scn)
    for a, b in zip(results1, results2):
        np.testing.assert_array_equal(a.infected_counts, b.infected_counts)
    np.testing.assert_array_equal(agg1.mean["infected_count"], agg2.mean["infected_count"])
    assert emit_csv(results1[0]) == emit_csv(results2[0])
    # replication 0 uses the base seed itself
    np.testing.assert_array_equal(results1[0].infected_counts, run(cfg, scn).infected_counts)


def test_mean_infection_curve_monotone():
    cfg = SimConfig(duration_s=300, period_s=10, seed=19)
    scn = Scenario(field_areas=[FieldSpec(120.0, 25, ANCHOR)])
    _, agg = run_replicated(cfg, 5, scn)
    assert np.all(np.diff(agg.mean["infected_count"]) >= -1e-12)


def test_extended_mode_end_to_end_more_messages_than_simple():
    scn = tiny_field(n=8, side=15.0)
    simple = SimConfig(duration_s=240, period_s=20, max_speed_mps=0.5, seed=3,
                       replications=1)
    extended = replace(simple, mode=ProtocolMode.EXTENDED, threshold=0)
    rs = run(simple, scn)
    re_ = run(extended, scn)
    assert rs.infected_counts[-1] == re_.infected_counts[-1] == 8
    assert re_.total_sent > rs.total_sent
    assert re_.totals["sample_sent"] > 0
    assert re_.totals["reply_sent"] > 0


def test_density_series_counts_seed_neighbors():
    cfg = SimConfig(duration_s=10, period_s=1, max_speed_mps=0.0, seed=2, replications=1)
    res = run(cfg, tiny_field(n=4, side=5.0))
    # all four static peers sit within 5*sqrt(2) m, so the seed sees 3 neighbors
    assert [c for _, c in res.density] == [3] * 11


def _relay_chain_scenario(n_relays, spacing=8.0):
    # a static seller at the anchor plus a line of beacon relays east of it
    from mcpsim import offset_point

    beacons = [offset_point(ANCHOR, spacing * (k + 1), 0.0) for k in range(n_relays)]
    return Scenario(
        field_areas=[FieldSpec(0.5, 1, ANCHOR)], field_sellers=1, beacons=beacons
    )


def test_forward_budget_bounds_chain_depth():
    # hop budget H lets the content travel exactly H hops down a relay chain
    for hops in (1, 2, 3):
        cfg = SimConfig(
            duration_s=400, range_m=10.0, period_s=10, max_speed_mps=0.0,
            seed=4, replications=1, kill=KillPolicy(hops_remaining=hops),
        )
        res = run(cfg, _relay_chain_scenario(6))
        assert res.infected_counts[-1] == 1 + hops, hops
    unlimited = SimConfig(
        duration_s=400, range_m=10.0, period_s=10, max_speed_mps=0.0,
        seed=4, replications=1,
    )
    res = run(unlimited, _relay_chain_scenario(6))
    assert res.infected_counts[-1] == 7


def test_junction_attenuation_blocks_streets_without_shared_junction():
    from mcpsim import MobilityMode, PathSpec, offset_point

    # two parallel streets 15 m apart, well inside the 20 m radio range;
    # they share no junction vertex, so urban attenuation cuts them off
    a0, a1 = ANCHOR, offset_point(ANCHOR, 300.0, 0.0)
    b0, b1 = offset_point(ANCHOR, 0.0, 15.0), offset_point(ANCHOR, 300.0, 15.0)
    paths = [
        PathSpec(MobilityMode.UNIFORM, (a0, a1), n_sellers=1, n_buyers=5),
        PathSpec(MobilityMode.UNIFORM, (b0, b1), n_sellers=0, n_buyers=5),
    ]
    base = SimConfig(duration_s=400, range_m=20.0, period_s=10, seed=6, replications=1)
    free = run(base, Scenario(paths=paths))
    assert free.infected_counts[-1] == 11  # both streets infected
    gated = run(replace(base, junction_attenuation=True), Scenario(paths=paths))
    assert gated.infected_counts[-1] == 6  # confined to the seller's street


def test_junction_attenuation_allows_corner_contact():
    from mcpsim import MobilityMode, PathSpec, offset_point

    # an L of two streets sharing the corner vertex: both populations walk
    # toward the corner and meet there
    corner = offset_point(ANCHOR, 300.0, 0.0)
    far = offset_point(ANCHOR, 300.0, 300.0)
    paths = [
        PathSpec(MobilityMode.UNIFORM, (ANCHOR, corner), n_sellers=1, n_buyers=2),
        PathSpec(MobilityMode.UNIFORM, (far, corner), n_sellers=0, n_buyers=2),
    ]
    cfg = SimConfig(duration_s=900, range_m=20.0, period_s=10, seed=6, replications=1,
                    junction_attenuation=True, hold_at_end=True)
    res = run(cfg, Scenario(paths=paths))
    assert res.infected_counts[-1] == 5  # the corner relays everything


def test_tracks_recorded_only_when_asked():
    cfg = SimConfig(duration_s=5, seed=2, replications=1, record_tracks=True)
    res = run(cfg, tiny_field(n=2, side=5.0))
    # one point at activation plus one per tick 0..5
    assert all(len(points) == 7 for points in res.tracks.values())
    res2 = run(replace(cfg, record_tracks=False), tiny_field(n=2, side=5.0))
    assert res2.tracks == {}
