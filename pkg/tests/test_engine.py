import math

import pytest
from hypothesis import given, settings, strategies as st

from leosim.engine import NS_PER_S, RngStream, SchedulingError, Simulator


def test_zero_time_event_runs_before_later_ones(sim):
    seen = []
    sim.schedule(5, seen.append, "late")
    sim.schedule(0, seen.append, "now")
    sim.run_until(10)
    assert seen == ["now", "late"]


def test_same_time_ties_follow_insertion_order(sim):
    seen = []
    sim.schedule(5, seen.append, 1)
    sim.schedule(5, seen.append, 2)
    sim.run_until(5)
    assert seen == [1, 2]


def test_scheduling_in_the_past_is_rejected(sim):
    sim.run_until(7)
    with pytest.raises(SchedulingError):
        sim.schedule(3, lambda _: None)


def test_empty_run_parks_clock():
    sim = Simulator()
    s = sim.run_until(10 * NS_PER_S)
    assert (s.events_dispatched, s.final_time, sim.now) == (0, 10 * NS_PER_S, 10 * NS_PER_S)


def test_run_until_is_inclusive_and_leaves_the_rest(sim):
    for t in (1, 2, 3):
        sim.schedule(t * NS_PER_S, lambda _: None)
    assert sim.run_until(2 * NS_PER_S).events_dispatched == 2
    assert len(sim.pending()) == 1


def test_cascading_events(sim):
    seen = []

    def first(_):
        seen.append(sim.now)
        sim.schedule(int(2.5 * NS_PER_S), lambda _: seen.append(sim.now))

    sim.schedule(2 * NS_PER_S, first)
    assert sim.run_until(3 * NS_PER_S).events_dispatched == 2
    assert seen == [2 * NS_PER_S, int(2.5 * NS_PER_S)]


def test_cancel_skips_event(sim):
    seen = []
    h = sim.schedule(1, seen.append, "x")
    sim.cancel(h)
    sim.cancel(None)
    assert sim.run_until(5).events_dispatched == 0
    assert seen == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=60))
def test_dispatch_order_is_time_then_sequence(times):
    sim = Simulator()
    seen = []
    for seq, t in enumerate(times):
        sim.schedule(t, seen.append, (t, seq))
    sim.run_until(100)
    assert seen == sorted(seen)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=30))
def test_clock_never_goes_backwards(times):
    sim = Simulator()
    clock = []
    for t in times:
        sim.schedule(t, lambda _: clock.append(sim.now))
    sim.run_until(2000)
    assert clock == sorted(clock)
    assert all(isinstance(c, int) for c in clock)


def test_uniform_stays_in_narrow_range():
    lo = 1.0
    hi = math.nextafter(lo, 2.0)
    r = RngStream(3, "bw")
    assert all(lo <= r.uniform(lo, hi) < hi for _ in range(1000))


def test_seed_sensitivity():
    a, b = RngStream(1, "bw"), RngStream(2, "bw")
    assert [a.random(), a.random()] != [b.random(), b.random()]


def test_same_seed_and_label_repeat():
    a, b = RngStream(9, "loss:s1->r1"), RngStream(9, "loss:s1->r1")
    assert [a.random() for _ in range(50)] == [b.random() for _ in range(50)]
    assert RngStream(9, "x").random() != RngStream(9, "y").random()


def test_uniform_mean_law_of_large_numbers():
    n = 100_000
    r = RngStream(1, "bw")
    mean = sum(r.uniform(50, 100) for _ in range(n)) / n
    # standard error is 50/sqrt(12 n); 1% of 75 is over 16 standard errors
    se = 50 / math.sqrt(12 * n)
    assert 0.75 > 16 * se
    assert abs(mean - 75) <= 0.75


def test_seed_range_checked():
    with pytest.raises(ValueError):
        RngStream(-1, "x")
