"""LeoTCP: INT-driven AIMD window control with base-RTT decoupling.

The per-ACK pipeline is: path-change check -> base-RTT estimate -> per-hop
tx rate and utilisation -> bottleneck selection -> EWMA -> AIMD against a
reference window that is re-snapshotted once per smoothed RTT. Loss never
touches the window; recovery is left entirely to SACK/RACK.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import NS_PER_S
from .netmodel import IntHeader, IntRecord, Packet
from .transport import Sender

ETA = 0.95


@dataclass
class LeoTcpParams:
    eta: float = ETA
    alpha: float = 0.125  # EWMA weight for utilisation and base RTT
    n_probe: int = 10
    reorder_fraction: float = 0.25  # RACK reorder window as a fraction of srtt
    initial_phase: bool = True
    initial_fraction: float = 0.95  # share of the bottleneck BDP claimed after the wait
    use_avg_rtt: bool = True  # False: ablation, utilisation uses the flow's own RTT
    min_base_rtt: float = 1e-6


def compute_tx_rate(cur: IntRecord, prev: IntRecord | None) -> float | None:
    """Bytes/s leaving the port between two records; None when no sample exists."""
    if prev is None or cur.switch_id != prev.switch_id or cur.ts <= prev.ts:
        return None
    return (cur.tx_bytes - prev.tx_bytes) * NS_PER_S / (cur.ts - prev.ts)


def compute_utilisation(rec: IntRecord, tx_rate: float, rtt: float | None = None) -> float | None:
    """Queue plus in-flight volume relative to the hop's BDP.

    ``rtt`` defaults to the switch-published average RTT; bandwidth is
    converted from bits to bytes so every term is in bytes.
    """
    t = rec.avg_rtt if rtt is None else rtt
    if t <= 0.0 or rec.bw <= 0.0:
        return None
    bdp = rec.bw / 8.0 * t
    return (rec.qlen + tx_rate * t) / bdp


def select_bottleneck(us) -> tuple[int, float] | None:
    """Index and value of the largest utilisation; earliest hop wins ties."""
    best = None
    for i, u in enumerate(us):
        if u is not None and (best is None or u > best[1]):
            best = (i, u)
    return best


def update_u_ewma(u_ewma: float | None, sample: float, alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    if u_ewma is None:
        return sample
    return (1.0 - alpha) * u_ewma + alpha * sample


def compute_ai(bw: float, rtt: float, flow_cnt: int, fraction: float) -> float:
    """Additive step in bytes: a fraction of the per-flow share of the hop BDP."""
    if flow_cnt < 1:
        raise ValueError("flow_cnt must be >= 1")
    return bw / 8.0 * rtt / flow_cnt * fraction


def update_cwnd(ref_cwnd: float, u_ewma: float, ai: float, eta: float = ETA,
                mss: float = 0.0) -> float:
    if u_ewma >= eta:
        cwnd = ref_cwnd / (u_ewma / eta) + ai
    else:
        cwnd = ref_cwnd + ai
    return cwnd if cwnd > mss else mss


def queue_delay(hops) -> float:
    """Seconds of queueing ahead of the packet, summed over hops."""
    d = 0.0
    for rec in hops:
        if rec.bw > 0.0:
            d += rec.rx_qlen * 8.0 / rec.bw
    return d


def estimate_base_rtt(ack_rtt: float, hops, base_rtt_est: float, alpha: float,
                      floor: float = 1e-6) -> tuple[float, float]:
    """Return (raw queue-corrected sample, updated EWMA estimate)."""
    raw = ack_rtt - queue_delay(hops)
    if raw < floor:
        raw = floor
    if base_rtt_est <= 0.0:
        return raw, raw
    return raw, (1.0 - alpha) * base_rtt_est + alpha * raw


def detect_path_change(ack_path_id: int, stored_path_id: int | None, last_update: int | None,
                       now: int, srtt: float) -> bool:
    if ack_path_id == stored_path_id:
        return False
    if last_update is None:
        return True
    return now - last_update >= srtt * NS_PER_S


def pacing_next_departure(cwnd: float, srtt: float, mss: int, now: int) -> int:
    rate = max(cwnd, float(mss)) / srtt
    return now + int(mss * NS_PER_S / rate)


class LeoTcpSender(Sender):
    protocol = "leotcp"

    def __init__(self, *args, params: LeoTcpParams | None = None, **kwargs) -> None:
        self.params = params or LeoTcpParams()
        kwargs.setdefault("reorder_fraction", self.params.reorder_fraction)
        super().__init__(*args, **kwargs)
        self.cwnd = float(self.params.n_probe * self.mss)
        self.ref_cwnd = self.cwnd
        self.u_ewma: float | None = None
        self.base_rtt_est = 0.0
        self.stored_path_id: int | None = None
        self.last_path_update: int | None = None
        self.last_ref_update = 0
        self.force_ref = True
        self.phase = "initial"
        self.prev_int: dict[int, IntRecord] = {}
        self.last_u: dict[int, float] = {}
        self.last_hdr: IntHeader | None = None
        self._wait_handle = None
        self.path_changes = 0
        self.stale_acks = 0

    def make_header(self) -> IntHeader:
        return IntHeader(0, self.base_rtt_est, self.cwnd, [])

    def on_start(self) -> None:
        self.set_cwnd(float(self.params.n_probe * self.mss), "initial_phase")

    def cc_on_ack(self, ack: Packet, rtt: float, delivered: int, now: int) -> None:
        p = self.params
        hdr = ack.echoed_int
        if hdr is None or not hdr.hops:
            self._repace()
            return
        if hdr.path_id != self.stored_path_id:
            if detect_path_change(hdr.path_id, self.stored_path_id, self.last_path_update, now,
                                  self.srtt):
                self.stored_path_id = hdr.path_id
                self.last_path_update = now
                self.prev_int.clear()
                self.last_u.clear()
                self.force_ref = True
                self.path_changes += 1
            else:
                self.stale_acks += 1
                return
        self.last_hdr = hdr
        _, self.base_rtt_est = estimate_base_rtt(rtt, hdr.hops, self.base_rtt_est, p.alpha,
                                                 p.min_base_rtt)

        prev_int = self.prev_int
        last_u = self.last_u
        own_rtt = None if p.use_avg_rtt else rtt
        best_u = -1.0
        best = None
        for rec in hdr.hops:
            sid = rec.switch_id
            prev = prev_int.get(sid)
            if prev is None:
                prev_int[sid] = rec
            elif rec.ts > prev.ts:
                prev_int[sid] = rec
                u = compute_utilisation(rec, (rec.tx_bytes - prev.tx_bytes) * NS_PER_S
                                        / (rec.ts - prev.ts), own_rtt)
                if u is not None:
                    last_u[sid] = u
            u = last_u.get(sid)
            if u is not None and u > best_u:
                best_u = u
                best = rec

        if self.phase != "steady":
            self._initial_phase_ack(hdr, now)
            if best is not None:
                self.u_ewma = update_u_ewma(self.u_ewma, best_u, p.alpha)
            self._repace()
            return
        if best is None:
            self._repace()
            return
        self.u_ewma = u_ewma = update_u_ewma(self.u_ewma, best_u, p.alpha)
        if self.force_ref or now - self.last_ref_update >= self.srtt * NS_PER_S:
            self.ref_cwnd = self.cwnd
            self.last_ref_update = now
            self.force_ref = False
        ai = compute_ai(best.bw, rtt, best.flow_cnt, 1.0 - p.eta)
        self.set_cwnd(update_cwnd(self.ref_cwnd, u_ewma, ai, p.eta), "aimd")
        self._repace()

    def _repace(self) -> None:
        if self.srtt > 0.0:
            self.pacing_rate = self.cwnd / self.srtt

    # -- initial phase -----------------------------------------------------

    def _initial_phase_ack(self, hdr: IntHeader, now: int) -> None:
        if self._wait_handle is not None:
            return
        wait = max(rec.avg_rtt for rec in hdr.hops)
        if wait <= 0.0:
            return  # switches have not published an average yet
        if not self.params.initial_phase:
            self._enter_steady(now)
            return
        self._wait_handle = self.sim.schedule(now + int(wait * NS_PER_S), self._end_wait)

    def _end_wait(self, _payload) -> None:
        if not self.active or self.phase == "steady":
            return
        now = self.sim.now
        hdr = self.last_hdr
        rec = min((r for r in hdr.hops if r.bw > 0.0), key=lambda r: r.bw / max(r.flow_cnt, 1))
        ai = compute_ai(rec.bw, self.last_rtt, max(rec.flow_cnt, 1), self.params.initial_fraction)
        self.set_cwnd(self.cwnd + ai, "initial_phase")
        self._enter_steady(now)
        self._repace()
        self._try_send()

    def _enter_steady(self, now: int) -> None:
        self.phase = "steady"
        self.ref_cwnd = self.cwnd
        self.last_ref_update = now
        self.force_ref = False

    def snapshot(self) -> dict:
        d = super().snapshot()
        d.update(u_ewma=self.u_ewma or 0.0, base_rtt_est=self.base_rtt_est,
                 path_id=self.stored_path_id or 0)
        return d
