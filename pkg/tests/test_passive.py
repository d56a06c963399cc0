import itertools

import pytest
from hypothesis import given, strategies as st

from dcetomo.errors import TooFewHosts, UnmarkedPair
from dcetomo.netsim import Simulator, build_topology
from dcetomo.passive import (
    PassiveDriver,
    ScheduleState,
    adjacent_pairs,
    coverage_complete,
    drive,
    plan_round,
    record_sample,
    rotation_schedule,
    schedule_rows,
    zigzag,
)


def star(n, prop_us=20.0):
    hosts = [f"h{i}" for i in range(n)]
    links = [{"parent": "f", "child": "s", "propagation_us": 50}]
    links += [{"parent": "s", "child": h, "propagation_us": prop_us + i} for i, h in enumerate(hosts)]
    return build_topology({"root": "f", "links": links, "receivers": hosts})


def test_zigzag_examples():
    assert zigzag(0, 5) == (0, 1, 4, 2, 3)
    assert zigzag(2, 4) == (2, 3, 1, 0)
    for r, n in itertools.product(range(7), range(1, 8)):
        assert sorted(zigzag(r, n)) == list(range(n))


def test_two_hosts_single_round():
    assert rotation_schedule(2) == [(0, 1)]
    assert plan_round(ScheduleState(2, 10)).marked_pairs == [(0, 1)]


def test_too_few_hosts():
    with pytest.raises(TooFewHosts):
        rotation_schedule(1)
    with pytest.raises(TooFewHosts):
        ScheduleState(1)


@pytest.mark.parametrize("n", range(2, 13))
def test_rotation_covers_all_pairs_within_n_minus_1_rounds(n):
    rounds = rotation_schedule(n)
    covered = {p for order in rounds for p in adjacent_pairs(order)}
    assert covered == set(itertools.combinations(range(n), 2))
    assert len(rounds) <= max(n - 1, 1)


def test_six_hosts_bruteforce():
    rounds = rotation_schedule(6)
    seen = set()
    for order in rounds:
        seen |= set(adjacent_pairs(order))
    assert len(seen) == 15 and len(rounds) <= 5


def test_round_robin_until_retired():
    st_ = ScheduleState(3, tau=2)
    first = plan_round(st_)
    assert st_.round == 0 and len(first.marked_pairs) == 2
    for p in first.marked_pairs:
        record_sample(st_, p)
    assert st_.round == 0
    record_sample(st_, first.marked_pairs[0])
    # one pair retired: it is no longer marked but the round continues
    assert plan_round(st_).marked_pairs == [first.marked_pairs[1]]
    record_sample(st_, first.marked_pairs[1])
    assert st_.round == 1
    leftover = set(plan_round(st_).marked_pairs)
    assert leftover and all(st_.counts[p] < 2 for p in leftover)


def test_unmarked_pair_rejected():
    st_ = ScheduleState(4, tau=5)
    never = set(itertools.combinations(range(4), 2)) - set(st_.round_pairs())
    with pytest.raises(UnmarkedPair):
        record_sample(st_, next(iter(never)))


def test_in_flight_samples_still_counted():
    st_ = ScheduleState(2, tau=1)
    record_sample(st_, (0, 1))
    record_sample(st_, (1, 0))
    assert st_.counts[(0, 1)] == 2 and coverage_complete(st_)


@given(st.integers(2, 9), st.integers(1, 5), st.randoms(use_true_random=False))
def test_counts_conserved(n, tau, rnd):
    st_ = ScheduleState(n, tau)
    total = 0
    for _ in range(10 * n * n * tau):
        if coverage_complete(st_):
            break
        pairs = plan_round(st_).marked_pairs
        record_sample(st_, rnd.choice(pairs))
        total += 1
    assert coverage_complete(st_)
    assert sum(st_.counts.values()) == total


def test_schedule_rows_shape():
    rows = schedule_rows(ScheduleState(4, 3))
    assert rows[0]["order"] == "0-1-3-2"
    assert rows[0]["marked_pairs"] == "0:1;1:3;2:3"
    assert rows[0]["counts"] == "0;0;0"


def test_two_hosts_reach_tau():
    sim = Simulator(star(2))
    state = ScheduleState(2, 1550)
    recs = drive(sim, state, delta=200_000)
    assert state.counts[(0, 1)] >= 1550
    assert len(recs[("h0", "h1")].sender_ts) >= 1550


def test_delivery_completeness_four_hosts():
    sim = Simulator(star(4))
    state = ScheduleState(4, 40)
    drv = PassiveDriver(sim, state, delta=300_000)
    drv.start_emitting()
    sim.run()
    assert coverage_complete(state)
    for block in range(drv.serials_emitted):
        for h in drv.hosts:
            assert drv.deliveries[(block, h)] == 1
    recs = drv.timing_records()
    assert {tuple(sorted(k)) for k in recs} == {tuple(sorted(p)) for p in itertools.combinations(drv.hosts, 2)}


def test_zero_overhead_against_plain_distribution():
    blocks = list(range(120))

    def run(marking):
        sim = Simulator(star(4))
        drv = PassiveDriver(sim, ScheduleState(4, 10_000), blocks, delta=300_000, marking=marking)
        drv.start_emitting()
        sim.run()
        sizes = sorted(p.size for p in sim.trace)
        return drv.packets_emitted, sizes, dict(drv.deliveries)

    marked, plain = run(True), run(False)
    assert marked == plain
    assert marked[0] == 120 * 4


def test_samples_match_trace():
    sim = Simulator(star(3))
    state = ScheduleState(3, 25)
    drv = PassiveDriver(sim, state, delta=300_000)
    drv.start_emitting()
    sim.run()
    per_pair = sim.trace.pair_samples()
    assert sum(len(s.packets_a) for s in per_pair.values()) == drv.samples_recorded
    assert sum(state.counts.values()) == drv.samples_recorded


def test_driver_rejects_host_mismatch():
    with pytest.raises(TooFewHosts):
        PassiveDriver(Simulator(star(3)), ScheduleState(4, 5))
