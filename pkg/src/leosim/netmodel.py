"""Links, drop-tail ports, INT-stamping switches and trace-driven path dynamics.

Data packets cross a route of directed channels. A channel with a bandwidth
owns an output :class:`Port` (FIFO, drop-tail, serialisation); a channel
without one is a pure propagation delay and is folded into the previous
hop's arrival event. ACKs ride the reverse route as pure delay: the reverse
direction carries no data, so it never queues.

Disconnections are applied lazily. Each channel keeps its down intervals and
a packet is destroyed on arrival if any channel of the leg it just crossed
was down while the packet was on it. Queued packets are flushed eagerly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .engine import NS_PER_S, RngStream, Simulator

INT_BASE_BYTES = 12  # pathID, baseRTT, cwnd
INT_RECORD_BYTES = 30
TCPIP_HEADER_BYTES = 40
MTU = 1500
MASK32 = 0xFFFFFFFF


class IntRecord(NamedTuple):
    """One switch's telemetry for the port a packet left through."""

    switch_id: int
    ts: int  # ns, when the packet left the queue
    bw: float  # bits/s of the outgoing link
    qlen: int  # bytes left behind at dequeue
    rx_qlen: int  # bytes ahead of the packet at enqueue
    tx_bytes: int  # cumulative bytes sent by the port, this packet included
    avg_rtt: float  # s
    flow_cnt: int


@dataclass(slots=True)
class IntHeader:
    path_id: int = 0
    base_rtt: float = 0.0
    cwnd: float = 0.0
    hops: list = field(default_factory=list)

    def copy(self) -> "IntHeader":
        # records are immutable tuples, so a shallow list copy is verbatim
        return IntHeader(self.path_id, self.base_rtt, self.cwnd, list(self.hops))

    @property
    def wire_bytes(self) -> int:
        return INT_BASE_BYTES + INT_RECORD_BYTES * len(self.hops)


def xor_path_id(current: int, switch_id: int) -> int:
    return (current ^ switch_id) & MASK32


class Packet:
    __slots__ = (
        "flow_key", "seq", "payload_len", "size", "is_ack", "int_header", "echoed_int",
        "send_ts", "ack_echo_ts", "tx_id", "cum_ack", "sack_blocks", "data_seq",
        "route", "hop", "leg_first", "leg_start", "rx_qlen", "sink",
    )

    def __init__(self, flow_key, seq: int, payload_len: int, size: int, is_ack: bool = False):
        self.flow_key = flow_key
        self.seq = seq
        self.payload_len = payload_len
        self.size = size
        self.is_ack = is_ack
        self.int_header: IntHeader | None = None
        self.echoed_int: IntHeader | None = None
        self.send_ts = 0
        self.ack_echo_ts = 0
        self.tx_id = 0
        self.cum_ack = 0
        self.sack_blocks: tuple = ()
        self.data_seq = 0
        self.route: tuple = ()
        self.hop = 0
        self.leg_first = 0
        self.leg_start = 0
        self.rx_qlen = 0
        self.sink: Callable[[Packet], None] | None = None


class Port:
    """Output port of a channel: drop-tail FIFO plus INT state.

    ``switch_id`` is None when the owning node is a host; such ports queue
    and serialise but never stamp telemetry.
    """

    __slots__ = (
        "queue", "qbytes", "capacity", "bw", "tx_bytes", "sum_w", "sum_w2", "flow_set",
        "avg_rtt", "flow_cnt", "timer", "busy", "switch_id", "sim", "name",
        "enqueued", "overflow_drops",
    )

    def __init__(self, capacity: int, bw: float, switch_id: int | None = None,
                 sim: Simulator | None = None, name: str = "") -> None:
        self.queue: deque[Packet] = deque()
        self.qbytes = 0
        self.capacity = capacity
        self.bw = bw
        self.tx_bytes = 0
        self.sum_w = 0.0
        self.sum_w2 = 0.0
        self.flow_set: set = set()
        self.avg_rtt = 0.0
        self.flow_cnt = 1
        self.timer = None
        self.busy = False
        self.switch_id = switch_id
        self.sim = sim
        self.name = name
        self.enqueued = 0
        self.overflow_drops = 0

    def enqueue(self, pkt: Packet, now: int) -> bool:
        size = pkt.size
        if self.qbytes + size > self.capacity:
            self.overflow_drops += 1
            return False
        pkt.rx_qlen = self.qbytes
        self.queue.append(pkt)
        self.qbytes += size
        self.enqueued += 1
        return True

    def dequeue_and_stamp(self, now: int) -> Packet:
        if not self.queue:
            raise IndexError(f"dequeue on empty port {self.name!r}")
        pkt = self.queue.popleft()
        qbytes = self.qbytes - pkt.size
        self.qbytes = qbytes
        hdr = pkt.int_header
        if hdr is not None and self.switch_id is not None:
            self.accumulate_rtt_sample(hdr.base_rtt, hdr.cwnd, pkt.flow_key)
            pkt.size += INT_RECORD_BYTES
            self.tx_bytes += pkt.size
            hdr.hops.append(IntRecord(self.switch_id, now, self.bw, qbytes, pkt.rx_qlen,
                                      self.tx_bytes, self.avg_rtt, self.flow_cnt))
            hdr.path_id = (hdr.path_id ^ self.switch_id) & MASK32
        else:
            self.tx_bytes += pkt.size
        return pkt

    def accumulate_rtt_sample(self, base_rtt: float, cwnd: float, flow_key) -> None:
        self.flow_set.add(flow_key)
        if base_rtt <= 0.0 or cwnd <= 0.0:
            return
        self.sum_w += base_rtt / cwnd
        self.sum_w2 += base_rtt * base_rtt / cwnd
        if self.avg_rtt == 0.0:
            # bootstrap: publish the first sample and start the interval clock
            self.avg_rtt = base_rtt
            if self.sim is not None:
                self.timer = self.sim.schedule_in(int(base_rtt * NS_PER_S), self._on_timer)

    def interval_update(self, now: int) -> tuple[float, int]:
        if self.sum_w > 0.0:
            self.avg_rtt = self.sum_w2 / self.sum_w
        if self.flow_set:
            self.flow_cnt = len(self.flow_set)
        self.sum_w = 0.0
        self.sum_w2 = 0.0
        self.flow_set = set()
        return self.avg_rtt, self.flow_cnt

    def _on_timer(self, _payload) -> None:
        self.interval_update(self.sim.now)
        self.timer = self.sim.schedule_in(max(1, int(self.avg_rtt * NS_PER_S)), self._on_timer)

    def flush(self) -> list[Packet]:
        dropped = list(self.queue)
        self.queue.clear()
        self.qbytes = 0
        return dropped


class Channel:
    """Directed link a->b. ``bw == 0`` marks a pure propagation delay."""

    __slots__ = ("id", "src", "dst", "bw", "delay", "loss", "rng", "port", "down", "up")

    def __init__(self, cid: str, src: str, dst: str, bw: float, delay: int, loss: float = 0.0,
                 rng: RngStream | None = None, port: Port | None = None) -> None:
        self.id = cid
        self.src = src
        self.dst = dst
        self.bw = bw
        self.delay = delay
        self.loss = loss
        self.rng = rng
        self.port = port
        self.down: list[list[int]] = []  # [start, end) intervals, end None while open
        self.up = True

    def down_during(self, t0: int, t1: int) -> bool:
        for iv in reversed(self.down):
            end = iv[1]
            if end is not None and end <= t0:
                return False
            if iv[0] < t1:
                return True
        return False


def maybe_drop_random(loss: float, rng: RngStream) -> bool:
    """True when the packet is lost; independent Bernoulli(loss) per call."""
    if loss <= 0.0:
        return False
    if loss >= 1.0:
        return True
    return rng.random() < loss


@dataclass
class Counters:
    injected: int = 0
    delivered: int = 0
    dropped_overflow: int = 0
    dropped_random: int = 0
    destroyed: int = 0

    def terminal(self) -> int:
        return self.delivered + self.dropped_overflow + self.dropped_random + self.destroyed


class FlowRoute:
    """Mutable holder so a reroute is seen by subsequently sent packets only."""

    __slots__ = ("forward", "reverse", "name")

    def __init__(self, forward: tuple, reverse: tuple, name: str = "") -> None:
        self.forward = forward
        self.reverse = reverse
        self.name = name


PATH_EVENT_KINDS = ("reroute", "bw_change", "delay_change", "loss_change", "disconnect", "reconnect")


@dataclass
class PathEvent:
    at: int
    kind: str
    target: str  # link id, channel id "a->b", or flow id for reroute
    value: object = None  # bw bits/s, delay ns, loss prob, duration ns, or path name


class Network:
    """Owns nodes, channels and the packet forwarding machinery for one run."""

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self.nodes: dict[str, dict] = {}
        self.channels: dict[str, Channel] = {}
        self.links: dict[str, tuple[Channel, Channel]] = {}
        self.routes: dict[str, FlowRoute] = {}
        self.paths: dict[str, tuple[str, ...]] = {}
        self.data = Counters()
        self.ack = Counters()
        self.has_disconnects = False

    # -- construction ------------------------------------------------------

    def add_node(self, node_id: str, kind: str = "host", switch_id: int | None = None) -> None:
        if kind == "switch" and switch_id is None:
            raise ValueError(f"switch {node_id!r} needs a switch_id")
        self.nodes[node_id] = {"kind": kind, "switch_id": switch_id}

    def add_link(self, link_id: str, a: str, b: str, bw: float, delay: int, buffer: int = 0,
                 loss: float = 0.0, reverse_loss: float = 0.0, seed: int = 0) -> tuple[Channel, Channel]:
        chans = []
        for src, dst, p in ((a, b, loss), (b, a, reverse_loss)):
            cid = f"{src}->{dst}"
            port = None
            if bw > 0:
                node = self.nodes[src]
                port = Port(buffer, bw, node["switch_id"] if node["kind"] == "switch" else None,
                            self.sim, cid)
            ch = Channel(cid, src, dst, bw, delay, p, RngStream(seed, f"loss:{cid}"), port)
            self.channels[cid] = ch
            chans.append(ch)
        self.links[link_id] = (chans[0], chans[1])
        return chans[0], chans[1]

    def channels_along(self, nodes: tuple[str, ...] | list[str]) -> tuple[Channel, ...]:
        out = []
        for u, v in zip(nodes, nodes[1:]):
            ch = self.channels.get(f"{u}->{v}")
            if ch is None:
                raise KeyError(f"no link between {u!r} and {v!r}")
            out.append(ch)
        return tuple(out)

    def add_path(self, name: str, nodes: list[str]) -> None:
        self.channels_along(nodes)
        self.paths[name] = tuple(nodes)

    def route_for(self, flow_id: str, path: str) -> FlowRoute:
        nodes = self.paths[path]
        r = FlowRoute(self.channels_along(nodes), self.channels_along(nodes[::-1]), path)
        self.routes[flow_id] = r
        return r

    def int_hops(self, path: str) -> int:
        return sum(1 for ch in self.channels_along(self.paths[path])
                   if ch.port is not None and ch.port.switch_id is not None)

    # -- forwarding --------------------------------------------------------

    def send(self, pkt: Packet, route: tuple, sink: Callable[[Packet], None]) -> None:
        """Inject a packet at the head of ``route``; ``sink`` receives it at the far end."""
        pkt.route = route
        pkt.sink = sink
        (self.ack if pkt.is_ack else self.data).injected += 1
        now = self.sim.now
        self._advance(pkt, now, 0, 0, now)

    def _advance(self, pkt: Packet, t: int, hop: int, leg_first: int, leg_start: int) -> None:
        route = pkt.route
        n = len(route)
        # acks never queue
        while hop < n:
            ch = route[hop]
            if ch.port is not None and not pkt.is_ack:
                break
            if ch.loss > 0.0 and maybe_drop_random(ch.loss, ch.rng):
                (self.ack if pkt.is_ack else self.data).dropped_random += 1
                return
            t += ch.delay
            hop += 1
        pkt.hop = hop
        pkt.leg_first = leg_first
        pkt.leg_start = leg_start
        if hop == n:
            self.sim.schedule(t, self._arrive_dst, pkt)
        elif t == self.sim.now:
            self._arrive_port(pkt)
        else:
            self.sim.schedule(t, self._arrive_port, pkt)

    def _leg_destroyed(self, pkt: Packet) -> bool:
        # walk back from the arrival so each channel is checked only for the
        # span the packet actually spent on it
        route = pkt.route
        t_end = self.sim.now
        first = pkt.leg_first
        for i in range(pkt.hop - 1, first - 1, -1):
            ch = route[i]
            t_start = pkt.leg_start if i == first else t_end - ch.delay
            if ch.down and ch.down_during(t_start, t_end + 1):
                return True
            t_end = t_start
        return False

    def _arrive_port(self, pkt: Packet) -> None:
        if self.has_disconnects and self._leg_destroyed(pkt):
            self.data.destroyed += 1
            return
        ch = pkt.route[pkt.hop]
        port = ch.port
        if not ch.up:
            self.data.destroyed += 1
            return
        if not port.enqueue(pkt, self.sim.now):
            self.data.dropped_overflow += 1
            return
        if not port.busy:
            self._service(ch)

    def _service(self, ch: Channel) -> None:
        port = ch.port
        if not port.queue:
            port.busy = False
            return
        now = self.sim.now
        pkt = port.dequeue_and_stamp(now)
        ser = int(pkt.size * 8 * NS_PER_S / port.bw + 0.5)
        port.busy = True
        self.sim.schedule(now + ser, self._service, ch)
        if ch.loss > 0.0 and maybe_drop_random(ch.loss, ch.rng):
            self.data.dropped_random += 1
            return
        hop = pkt.hop
        self._advance(pkt, now + ser + ch.delay, hop + 1, hop, now)

    def _arrive_dst(self, pkt: Packet) -> None:
        counters = self.ack if pkt.is_ack else self.data
        if self.has_disconnects and self._leg_destroyed(pkt):
            counters.destroyed += 1
            return
        counters.delivered += 1
        pkt.sink(pkt)

    # -- dynamics ----------------------------------------------------------

    def resolve_target(self, target: str, kind: str) -> list[Channel]:
        if target in self.links:
            fwd, rev = self.links[target]
            return [fwd] if kind == "loss_change" else [fwd, rev]
        if target in self.channels:
            return [self.channels[target]]
        raise KeyError(f"unknown link or channel {target!r}")

    def apply_path_event(self, ev: PathEvent) -> None:
        now = self.sim.now
        if ev.kind == "reroute":
            route = self.routes[ev.target]
            nodes = self.paths[ev.value]
            route.forward = self.channels_along(nodes)
            route.reverse = self.channels_along(nodes[::-1])
            route.name = ev.value
            return
        chans = self.resolve_target(ev.target, ev.kind)
        for ch in chans:
            if ev.kind == "bw_change":
                ch.bw = float(ev.value)
                if ch.port is not None:
                    ch.port.bw = ch.bw
            elif ev.kind == "delay_change":
                ch.delay = int(ev.value)
            elif ev.kind == "loss_change":
                ch.loss = float(ev.value)
            elif ev.kind == "disconnect":
                if not ch.up:
                    continue
                self.has_disconnects = True
                ch.up = False
                ch.down.append([now, None])
                if ch.port is not None:
                    self.data.destroyed += len(ch.port.flush())
            elif ev.kind == "reconnect":
                if ch.up:
                    continue
                ch.up = True
                ch.down[-1][1] = now
            else:
                raise ValueError(f"unknown path event kind {ev.kind!r}")
        if ev.kind == "disconnect" and ev.value:
            self.sim.schedule(now + int(ev.value), self.apply_path_event,
                              PathEvent(now + int(ev.value), "reconnect", ev.target))

    # -- accounting --------------------------------------------------------

    def in_flight(self) -> tuple[int, int]:
        """Independent count of (data, ack) packets queued or propagating."""
        queued = sum(len(ch.port.queue) for ch in self.channels.values() if ch.port is not None)
        data = queued
        ack = 0
        for entry in self.sim.pending():
            cb = entry[2]
            if cb == self._arrive_port:
                data += 1
            elif cb == self._arrive_dst:
                if entry[3].is_ack:
                    ack += 1
                else:
                    data += 1
        return data, ack
