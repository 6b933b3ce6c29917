"""TCP plumbing shared by every congestion controller.

Sequence space is tracked in whole segments (``idx = seq // mss``); the wire
carries byte offsets. Loss recovery is SACK + RACK: a segment is declared
lost once a segment transmitted after it has been delivered and it has been
outstanding for longer than ``srtt + reorder_window``. An RTO marks every
un-SACKed segment lost. What a loss *means* for the window is left to the
subclass.
"""

from __future__ import annotations

import heapq
from array import array
from bisect import bisect_left, bisect_right
from collections import OrderedDict

from .engine import NS_PER_S, Simulator
from .netmodel import TCPIP_HEADER_BYTES, FlowRoute, IntHeader, Network, Packet

MIN_RTO_NS = 200_000_000
INITIAL_RTO_NS = 1_000_000_000
MAX_RTO_NS = 60 * NS_PER_S
SACK_MAX_BLOCKS = 3


class IntervalSet:
    """Disjoint half-open integer intervals kept sorted."""

    __slots__ = ("starts", "ends")

    def __init__(self) -> None:
        self.starts: list[int] = []
        self.ends: list[int] = []

    def __len__(self) -> int:
        return len(self.starts)

    def __contains__(self, x: int) -> bool:
        i = bisect_right(self.starts, x) - 1
        return i >= 0 and x < self.ends[i]

    def intervals(self) -> list[tuple[int, int]]:
        return list(zip(self.starts, self.ends))

    def add(self, s: int, e: int) -> list[tuple[int, int]]:
        """Insert [s, e); return the sub-ranges that were not already covered."""
        if s >= e:
            return []
        starts, ends = self.starts, self.ends
        i = bisect_left(ends, s)  # first interval ending at or after s
        j = bisect_right(starts, e)  # intervals starting at or before e
        new = []
        cur = s
        for k in range(i, j):
            if starts[k] > cur:
                new.append((cur, min(starts[k], e)))
            if ends[k] > cur:
                cur = ends[k]
        if cur < e:
            new.append((cur, e))
        if i < j:
            ns = starts[i] if starts[i] < s else s
            ne = ends[j - 1] if ends[j - 1] > e else e
            starts[i:j] = [ns]
            ends[i:j] = [ne]
        else:
            starts.insert(i, s)
            ends.insert(i, e)
        return new

    def trim_below(self, x: int) -> None:
        starts, ends = self.starts, self.ends
        while starts and ends[0] <= x:
            del starts[0]
            del ends[0]
        if starts and starts[0] < x:
            starts[0] = x

    def pop_prefix(self, x: int) -> int:
        """If an interval starts at ``x``, remove it and return its end; else ``x``."""
        if self.starts and self.starts[0] == x:
            del self.starts[0]
            return self.ends.pop(0)
        return x

    def containing(self, x: int) -> int:
        i = bisect_right(self.starts, x) - 1
        return i if i >= 0 and x < self.ends[i] else -1


class Seg:
    __slots__ = ("idx", "send_ts", "tx_id", "sacked", "lost", "retx")

    def __init__(self, idx: int, send_ts: int, tx_id: int) -> None:
        self.idx = idx
        self.send_ts = send_ts
        self.tx_id = tx_id
        self.sacked = False
        self.lost = False
        self.retx = 0


class Scoreboard:
    """Outstanding segments, SACK state and RACK bookkeeping for one sender."""

    def __init__(self) -> None:
        self.snd_una = 0
        self.segs: dict[int, Seg] = {}
        # transmitted, not yet delivered, not marked lost; in transmission order
        self.pipe_order: OrderedDict[int, Seg] = OrderedDict()
        self.sacked = IntervalSet()
        self._lost_heap: list[int] = []
        self.lost_pending = 0
        self.rack_tx_id = 0
        self.rack_xmit_ts = 0
        self.deadline = 0  # earliest pending RACK expiry, 0 = none
        self.lost_retransmits = 0  # of the segments marked by the last detect_losses

    @property
    def pipe(self) -> int:
        return len(self.pipe_order)

    def on_transmit(self, idx: int, now: int, tx_id: int) -> Seg:
        seg = self.segs.get(idx)
        if seg is None:
            seg = Seg(idx, now, tx_id)
            self.segs[idx] = seg
        else:
            if seg.lost:
                seg.lost = False
                self.lost_pending -= 1
            seg.retx += 1
            seg.send_ts = now
            seg.tx_id = tx_id
        self.pipe_order[idx] = seg
        return seg

    def _deliver(self, seg: Seg) -> None:
        if seg.lost:
            seg.lost = False
            self.lost_pending -= 1
        else:
            self.pipe_order.pop(seg.idx, None)

    def on_ack(self, cum_idx: int, blocks, echo_tx_id: int, echo_ts: int) -> tuple[int, int]:
        """Apply a cumulative ACK and SACK blocks (segment units).

        Returns (segments newly cum-acked, segments newly delivered in total).
        """
        delivered = 0
        cum_new = 0
        segs = self.segs
        if cum_idx > self.snd_una:
            for idx in range(self.snd_una, cum_idx):
                seg = segs.pop(idx, None)
                if seg is None:
                    continue
                cum_new += 1
                if not seg.sacked:
                    self._deliver(seg)
                    delivered += 1
            self.snd_una = cum_idx
            self.sacked.trim_below(cum_idx)
        for s, e in blocks:
            if s < self.snd_una:
                s = self.snd_una
            for ps, pe in self.sacked.add(s, e):
                for idx in range(ps, pe):
                    seg = segs.get(idx)
                    if seg is not None and not seg.sacked:
                        seg.sacked = True
                        self._deliver(seg)
                        delivered += 1
        if echo_tx_id > self.rack_tx_id:
            self.rack_tx_id = echo_tx_id
            self.rack_xmit_ts = echo_ts
        return cum_new, delivered

    def detect_losses(self, now: int, threshold: int) -> int:
        """RACK: mark segments sent before the latest delivered one that have timed out."""
        order = self.pipe_order
        rack_id = self.rack_tx_id
        lost = 0
        lost_retx = 0
        self.deadline = 0
        while order:
            idx = next(iter(order))
            seg = order[idx]
            if seg.tx_id >= rack_id:
                break
            if now - seg.send_ts > threshold:
                del order[idx]
                seg.lost = True
                self.lost_pending += 1
                heapq.heappush(self._lost_heap, idx)
                lost += 1
                if seg.retx:
                    lost_retx += 1
            else:
                self.deadline = seg.send_ts + threshold + 1
                break
        self.lost_retransmits = lost_retx
        return lost

    def mark_all_lost(self) -> int:
        n = 0
        for idx, seg in self.pipe_order.items():
            seg.lost = True
            heapq.heappush(self._lost_heap, idx)
            n += 1
        self.lost_pending += n
        self.pipe_order.clear()
        return n

    def next_lost(self) -> int | None:
        heap = self._lost_heap
        while heap:
            idx = heap[0]
            seg = self.segs.get(idx)
            if seg is not None and seg.lost:
                return idx
            heapq.heappop(heap)
        return None

    def pop_lost(self) -> None:
        heapq.heappop(self._lost_heap)


class FlowLog:
    """Raw per-flow samples kept in compact arrays."""

    def __init__(self) -> None:
        self.rx_time = array("q")
        self.rx_seq = array("q")
        self.rx_len = array("q")
        self.rtt_time = array("q")
        self.rtt_ns = array("q")
        self.state: list[tuple] = []
        # every cwnd mutation, tagged with its cause, when instrumentation is on
        self.cwnd_trace: list[tuple[int, str, float]] | None = None


class Receiver:
    """Cumulative + SACK receiver that echoes the INT header into every ACK."""

    def __init__(self, sim: Simulator, net: Network, flow_key, mss: int, route: FlowRoute,
                 log: FlowLog) -> None:
        self.sim = sim
        self.net = net
        self.flow_key = flow_key
        self.mss = mss
        self.route = route
        self.log = log
        self.rcv_nxt = 0
        self.ooo = IntervalSet()
        self.sender = None
        self.unique_bytes = 0
        self.duplicates = 0

    def on_data(self, pkt: Packet) -> None:
        ack = self.receiver_on_data(pkt)
        self.net.send(ack, self.route.reverse, self.sender.on_ack)

    def receiver_on_data(self, pkt: Packet) -> Packet:
        now = self.sim.now
        idx = pkt.seq // self.mss
        log = self.log
        log.rx_time.append(now)
        log.rx_seq.append(pkt.seq)
        log.rx_len.append(pkt.payload_len)
        ooo = self.ooo
        if idx == self.rcv_nxt:
            self.rcv_nxt = ooo.pop_prefix(idx + 1)
            self.unique_bytes += pkt.payload_len
        elif idx < self.rcv_nxt or not ooo.add(idx, idx + 1):
            self.duplicates += 1
        else:
            self.unique_bytes += pkt.payload_len
        blocks = ()
        if ooo.starts:
            mss = self.mss
            first = ooo.containing(idx)
            order = [first] if first >= 0 else []
            for k in range(len(ooo.starts) - 1, -1, -1):
                if len(order) >= SACK_MAX_BLOCKS:
                    break
                if k != first:
                    order.append(k)
            blocks = tuple((ooo.starts[k] * mss, ooo.ends[k] * mss) for k in order)
        hdr = pkt.int_header
        echoed = hdr.copy() if hdr is not None else None
        size = TCPIP_HEADER_BYTES + (2 + 8 * len(blocks) if blocks else 0)
        if echoed is not None:
            size += echoed.wire_bytes
        ack = Packet(self.flow_key, 0, 0, size, is_ack=True)
        ack.cum_ack = self.rcv_nxt * self.mss
        ack.sack_blocks = blocks
        ack.data_seq = pkt.seq
        ack.echoed_int = echoed
        ack.ack_echo_ts = pkt.send_ts
        ack.tx_id = pkt.tx_id
        return ack


class Sender:
    """Window-limited (optionally paced) bulk sender with SACK/RACK recovery.

    Subclasses implement the congestion controller through the ``cc_*``
    hooks and set ``pacing_rate`` (bytes/s, 0 disables pacing).
    """

    protocol = "base"
    initial_cwnd_segments = 10

    def __init__(self, sim: Simulator, net: Network, flow_id: str, flow_key, route: FlowRoute,
                 mss: int, log: FlowLog, reorder_fraction: float = 0.25) -> None:
        self.sim = sim
        self.net = net
        self.flow_id = flow_id
        self.flow_key = flow_key
        self.route = route
        self.mss = mss
        self.log = log
        self.reorder_fraction = reorder_fraction
        self.receiver: Receiver | None = None
        self.sb = Scoreboard()
        self.snd_nxt = 0
        self.cwnd = float(self.initial_cwnd_segments * mss)
        self.pacing_rate = 0.0
        self.srtt = 0.0
        self.rttvar = 0.0
        self.last_rtt = 0.0
        self.active = False
        self.next_send_at = 0
        self._pace_timer = None
        self._rto_timer = None
        self.rto_deadline = 0
        self.rto_backoff = 1
        self._rack_timer = None
        self._rack_at = 0
        self._tx_id = 0
        self.bytes_acked = 0
        self.retransmissions = 0
        self.rto_count = 0

    # -- lifecycle ---------------------------------------------------------

    def start(self, _payload=None) -> None:
        self.active = True
        self.on_start()
        self._try_send()

    def stop(self, _payload=None) -> None:
        self.active = False
        for h in (self._pace_timer, self._rto_timer, self._rack_timer):
            self.sim.cancel(h)
        self._pace_timer = self._rto_timer = self._rack_timer = None

    def on_start(self) -> None:
        pass

    # -- hooks -------------------------------------------------------------

    def make_header(self) -> IntHeader | None:
        return None

    def cc_on_ack(self, ack: Packet, rtt: float, delivered: int, now: int) -> None:
        pass

    def cc_on_loss(self, n_lost: int, now: int) -> None:
        pass

    def cc_on_rto(self, now: int) -> None:
        pass

    def set_cwnd(self, value: float, cause: str) -> None:
        floor = float(self.mss)
        self.cwnd = value if value > floor else floor
        trace = self.log.cwnd_trace
        if trace is not None:
            trace.append((self.sim.now, cause, self.cwnd))

    # -- timers ------------------------------------------------------------

    def rto_ns(self) -> int:
        if self.srtt <= 0.0:
            base = INITIAL_RTO_NS
        else:
            base = max(int(2.0 * self.srtt * NS_PER_S), MIN_RTO_NS)
        return min(base * self.rto_backoff, MAX_RTO_NS)

    def _arm_rto(self, now: int) -> None:
        self.rto_deadline = now + self.rto_ns()
        if self._rto_timer is None:
            self._rto_timer = self.sim.schedule(self.rto_deadline, self._on_rto_timer)

    def _on_rto_timer(self, _payload) -> None:
        self._rto_timer = None
        if not self.active:
            return
        now = self.sim.now
        if self.sb.pipe == 0 and self.sb.lost_pending == 0:
            return
        if now < self.rto_deadline:
            self._rto_timer = self.sim.schedule(self.rto_deadline, self._on_rto_timer)
            return
        self.rto_count += 1
        self.sb.mark_all_lost()
        self.cc_on_rto(now)
        self.rto_backoff = min(self.rto_backoff * 2, 64)
        self.next_send_at = now
        self._arm_rto(now)
        self._try_send()

    def _arm_rack(self, at: int) -> None:
        if self._rack_timer is not None and self._rack_at <= at:
            return
        self.sim.cancel(self._rack_timer)
        self._rack_at = at
        self._rack_timer = self.sim.schedule(at, self._on_rack_timer)

    def _on_rack_timer(self, _payload) -> None:
        self._rack_timer = None
        if not self.active:
            return
        self._run_rack(self.sim.now)
        self._try_send()

    def _run_rack(self, now: int) -> None:
        thresh = int(self.srtt * (1.0 + self.reorder_fraction) * NS_PER_S)
        n = self.sb.detect_losses(now, thresh)
        if n:
            self.cc_on_loss(n, now)
        if self.sb.deadline:
            self._arm_rack(self.sb.deadline)

    def _on_pace(self, _payload) -> None:
        self._pace_timer = None
        self._try_send()

    # -- data path ---------------------------------------------------------

    def _try_send(self) -> None:
        if not self.active:
            return
        sim = self.sim
        now = sim.now
        mss = self.mss
        sb = self.sb
        while True:
            rate = self.pacing_rate
            if rate > 0.0 and now < self.next_send_at:
                if self._pace_timer is None:
                    self._pace_timer = sim.schedule(self.next_send_at, self._on_pace)
                return
            if (sb.pipe + 1) * mss > self.cwnd + 1e-6:
                return
            idx = sb.next_lost()
            if idx is not None:
                sb.pop_lost()
                self.retransmissions += 1
            else:
                idx = self.snd_nxt
                self.snd_nxt += 1
            self._transmit(idx, now)
            if rate > 0.0:
                self.next_send_at = now + int(mss * NS_PER_S / rate)

    def _transmit(self, idx: int, now: int) -> None:
        mss = self.mss
        self._tx_id += 1
        hdr = self.make_header()
        size = TCPIP_HEADER_BYTES + mss
        if hdr is not None:
            size += hdr.wire_bytes
        pkt = Packet(self.flow_key, idx * mss, mss, size)
        pkt.int_header = hdr
        pkt.send_ts = now
        pkt.tx_id = self._tx_id
        was_idle = self.sb.pipe == 0
        self.sb.on_transmit(idx, now, self._tx_id)
        if was_idle or self._rto_timer is None:
            self._arm_rto(now)
        self.net.send(pkt, self.route.forward, self.receiver.on_data)

    def _update_rtt(self, rtt: float) -> None:
        if self.srtt <= 0.0:
            self.srtt = rtt
            self.rttvar = rtt / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - rtt)
            self.srtt = 0.875 * self.srtt + 0.125 * rtt

    def on_ack(self, ack: Packet) -> None:
        if not self.active:
            return
        now = self.sim.now
        rtt_ns = now - ack.ack_echo_ts
        rtt = rtt_ns / NS_PER_S
        self.last_rtt = rtt
        self._update_rtt(rtt)
        log = self.log
        log.rtt_time.append(now)
        log.rtt_ns.append(rtt_ns)
        mss = self.mss
        blocks = ack.sack_blocks
        if blocks:
            blocks = [(s // mss, e // mss) for s, e in blocks]
        cum_new, delivered = self.sb.on_ack(ack.cum_ack // mss, blocks, ack.tx_id, ack.ack_echo_ts)
        if delivered:
            self.bytes_acked += delivered * mss
            self.rto_backoff = 1
            self.rto_deadline = now + self.rto_ns()
        self._run_rack(now)
        self.cc_on_ack(ack, rtt, delivered, now)
        self._try_send()

    def snapshot(self) -> dict:
        return {
            "cwnd": self.cwnd,
            "srtt": self.srtt,
            "bytes_acked": self.bytes_acked,
            "retransmissions": self.retransmissions,
        }
