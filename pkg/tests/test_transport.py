import pytest
from hypothesis import given, settings, strategies as st

from leosim.engine import Simulator
from leosim.netmodel import IntHeader, IntRecord, Network, Packet
from leosim.transport import (INITIAL_RTO_NS, MIN_RTO_NS, FlowLog, IntervalSet, Receiver,
                              Scoreboard, Sender)
from leosim.netmodel import FlowRoute

MS = 1_000_000


def test_interval_set_merges_and_reports_new_ranges():
    s = IntervalSet()
    assert s.add(5, 8) == [(5, 8)]
    assert s.add(1, 3) == [(1, 3)]
    assert s.add(2, 6) == [(3, 5)]
    assert s.intervals() == [(1, 8)]
    assert s.add(1, 8) == []
    s.trim_below(4)
    assert s.intervals() == [(4, 8)]
    assert s.pop_prefix(4) == 8 and len(s) == 0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), st.integers(1, 10)), max_size=25))
def test_interval_set_matches_a_plain_set(adds):
    s = IntervalSet()
    ref: set[int] = set()
    for a, ln in adds:
        new = s.add(a, a + ln)
        fresh = {x for lo, hi in new for x in range(lo, hi)}
        assert fresh == set(range(a, a + ln)) - ref
        ref |= fresh
    assert {x for lo, hi in s.intervals() for x in range(lo, hi)} == ref
    ivs = s.intervals()
    assert all(e1 < s2 for (_, e1), (s2, _) in zip(ivs, ivs[1:]))


def sent(sb, n, t0=0, gap=0):
    for i in range(n):
        sb.on_transmit(i, t0 + i * gap, i + 1)


def test_reordering_inside_window_is_not_loss():
    sb = Scoreboard()
    sent(sb, 3)
    # segment 1 overtakes segment 0
    sb.on_ack(0, [(1, 2)], echo_tx_id=2, echo_ts=0)
    assert sb.detect_losses(now=5 * MS, threshold=25 * MS) == 0
    assert sb.deadline == 25 * MS + 1
    sb.on_ack(3, [], echo_tx_id=3, echo_ts=0)
    assert sb.detect_losses(now=30 * MS, threshold=25 * MS) == 0
    assert sb.lost_pending == 0 and sb.pipe == 0


def test_single_drop_is_marked_after_the_window():
    sb = Scoreboard()
    sent(sb, 5)
    sb.on_ack(0, [(1, 5)], echo_tx_id=5, echo_ts=0)
    assert sb.detect_losses(now=10 * MS, threshold=25 * MS) == 0
    assert sb.detect_losses(now=26 * MS, threshold=25 * MS) == 1
    assert sb.next_lost() == 0
    sb.pop_lost()
    assert sb.next_lost() is None


def test_loss_needs_a_later_delivery():
    sb = Scoreboard()
    sent(sb, 3)
    assert sb.detect_losses(now=10**9, threshold=MS) == 0


def test_retransmission_clears_lost_state():
    sb = Scoreboard()
    sent(sb, 2)
    sb.on_ack(0, [(1, 2)], 2, 0)
    sb.detect_losses(50 * MS, MS)
    assert sb.lost_pending == 1
    sb.on_transmit(0, 50 * MS, 3)
    assert sb.lost_pending == 0 and sb.segs[0].retx == 1
    cum, delivered = sb.on_ack(2, [], 3, 50 * MS)
    assert (cum, delivered) == (2, 1)


def test_mark_all_lost():
    sb = Scoreboard()
    sent(sb, 4)
    sb.on_ack(0, [(2, 3)], 3, 0)
    assert sb.mark_all_lost() == 3
    assert sb.pipe == 0


# -- receiver ------------------------------------------------------------------

def receiver(mss=1000):
    sim = Simulator()
    net = Network(sim)
    return Receiver(sim, net, "k", mss, FlowRoute((), ()), FlowLog())


def data(idx, mss=1000, hdr=None):
    p = Packet("k", idx * mss, mss, mss + 40)
    p.int_header = hdr
    p.tx_id = idx + 1
    p.send_ts = 123
    return p


def test_in_order_advances_cumulative_ack():
    rx = receiver()
    ack = rx.receiver_on_data(data(0))
    assert ack.cum_ack == 1000 and ack.sack_blocks == ()


def test_gap_produces_sack_block():
    rx = receiver()
    rx.receiver_on_data(data(0))
    ack = rx.receiver_on_data(data(2))
    assert ack.cum_ack == 1000
    assert ack.sack_blocks == ((2000, 3000),)
    ack = rx.receiver_on_data(data(1))
    assert ack.cum_ack == 3000 and ack.sack_blocks == ()


def test_duplicates_counted_once():
    rx = receiver()
    for i in (0, 0, 1, 3, 3):
        rx.receiver_on_data(data(i))
    assert rx.unique_bytes == 3000 and rx.duplicates == 2


def test_echoed_int_is_verbatim():
    rec = IntRecord(7, 10, 1e8, 100, 50, 1500, 0.02, 3)
    hdr = IntHeader(7, 0.02, 12345.0, [rec])
    ack = receiver().receiver_on_data(data(0, hdr=hdr))
    assert ack.echoed_int == hdr and ack.echoed_int is not hdr
    assert ack.ack_echo_ts == 123 and ack.tx_id == 1


# -- timers --------------------------------------------------------------------

def sender():
    sim = Simulator()
    net = Network(sim)
    return Sender(sim, net, "f", "k", FlowRoute((), ()), 1000, FlowLog())


def test_rto_rule():
    s = sender()
    assert s.rto_ns() == INITIAL_RTO_NS
    s.srtt = 0.02
    assert s.rto_ns() == MIN_RTO_NS
    s.srtt = 0.3
    assert s.rto_ns() == 600 * MS
    s.rto_backoff = 4
    assert s.rto_ns() == 2400 * MS


def test_srtt_smoothing():
    s = sender()
    s._update_rtt(0.1)
    assert s.srtt == 0.1
    s._update_rtt(0.02)
    assert s.srtt == pytest.approx(0.875 * 0.1 + 0.125 * 0.02)


def test_cwnd_floor():
    s = sender()
    s.set_cwnd(10.0, "x")
    assert s.cwnd == 1000.0
