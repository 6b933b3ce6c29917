"""Randomised invariants."""

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import dumbbell, run
from leosim.engine import NS_PER_S
from leosim.leotcp import compute_utilisation, detect_path_change
from leosim.metrics import jain_index
from leosim.netmodel import IntRecord, Port

goodputs = st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 1e10)), min_size=1,
                    max_size=40).filter(any)


@settings(max_examples=1000, deadline=None)
@given(goodputs, st.floats(1e-6, 1e6))
def test_jain_scale_invariance(xs, c):
    j = jain_index(xs)
    assert 1 / len(xs) - 1e-12 <= j <= 1 + 1e-12
    assert jain_index([c * x for x in xs]) == pytest.approx(j, rel=1e-9)


@settings(max_examples=1000, deadline=None)
@given(st.floats(1e-4, 2.0), st.lists(st.floats(1.0, 1e8), min_size=1, max_size=60),
       st.integers(1, 10))
def test_avg_rtt_homogeneous_identity(r, cwnds, nflows):
    port = Port(10**6, 1e8, 1)
    for i, w in enumerate(cwnds):
        port.accumulate_rtt_sample(r, w, i % nflows)
    avg, cnt = port.interval_update(0)
    assert avg == pytest.approx(r, rel=1e-12)
    assert cnt == min(nflows, len(cwnds))


@settings(max_examples=300, deadline=None)
@given(st.floats(1e6, 1e10), st.floats(1e-4, 1.0), st.integers(0, 10**7), st.floats(0, 1e9),
       st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_same_record_same_utilisation_for_any_flow(bw, avg, qlen, rate, r1, r2):
    rec = IntRecord(1, 0, bw, qlen, 0, 0, avg, 2)
    # flows with own RTTs r1 and r2 both evaluate the published average
    u1 = compute_utilisation(rec, rate)
    u2 = compute_utilisation(rec, rate)
    assert u1 == u2
    assert u1 == pytest.approx((qlen + rate * avg) / (bw / 8 * avg))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 40_000_000)), min_size=1, max_size=50),
       st.floats(0.005, 0.2))
def test_path_id_changes_at_most_once_per_srtt(acks, srtt):
    stored, last, now = None, None, 0
    changes = []
    for pid, gap in acks:
        now += gap
        if detect_path_change(pid, stored, last, now, srtt):
            stored, last = pid, now
            changes.append(now)
    assert all(b - a >= srtt * NS_PER_S for a, b in zip(changes, changes[1:]))


@pytest.fixture(scope="module")
def shared_run():
    sc = dumbbell(name="share", duration="4s", bw="50Mbps",
                  flows=["{id: a, protocol: leotcp, path: main}",
                         "{id: b, protocol: cubic, path: main, start: 500ms}",
                         "{id: c, protocol: reno, path: main, start: 1s}"])
    return run(sc)


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 3_900_000_000), st.integers(1_000_000, 2_000_000_000))
def test_summed_goodput_never_exceeds_link_rate(shared_run, t0, length):
    t1 = min(t0 + length, 4 * NS_PER_S)
    if t1 <= t0:
        return
    total = sum(fr.goodput(t0, t1) for fr in shared_run.flows.values())
    # a window can catch at most one segment in service at its left edge
    slack = 1500 * 8 * NS_PER_S / (t1 - t0)
    assert total <= 50e6 + slack
