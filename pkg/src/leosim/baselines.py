"""Loss-based reference controllers: Reno-style AIMD and Cubic.

Both share the SACK/RACK machinery of :class:`~leosim.transport.Sender`, run
unpaced (ACK-clocked) and never look at INT. A loss episode reduces the
window once; further losses before the recovery point is cum-acked are part
of the same episode.
"""

from __future__ import annotations

import math

from .engine import NS_PER_S
from .netmodel import Packet
from .transport import Sender

CUBIC_C = 0.4
CUBIC_BETA = 0.7


def cubic_window(t: float, w_max: float, k: float, c: float = CUBIC_C) -> float:
    """W(t) = C (t - K)^3 + W_max, in segments."""
    return c * (t - k) ** 3 + w_max


def cubic_k(w_max: float, cwnd: float, c: float = CUBIC_C) -> float:
    """Time for W(t) to climb from ``cwnd`` back to ``w_max``."""
    if cwnd >= w_max:
        return 0.0
    return math.pow((w_max - cwnd) / c, 1.0 / 3.0)


class _LossBased(Sender):
    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.ssthresh = math.inf
        self.in_recovery = False
        self.recovery_point = -1
        self.loss_events = 0
        self.last_reduction = -(2**62)

    def _leave_recovery_if_done(self) -> None:
        if self.in_recovery and self.sb.snd_una > self.recovery_point:
            self.in_recovery = False

    def cc_on_loss(self, n_lost: int, now: int) -> None:
        # a lost retransmission is a fresh congestion signal (RFC 5681), at
        # most once per srtt so one burst does not cascade
        if self.in_recovery and not (self.sb.lost_retransmits
                                     and now - self.last_reduction >= self.srtt * NS_PER_S):
            return
        self.in_recovery = True
        self.last_reduction = now
        self.recovery_point = self.snd_nxt - 1
        self.loss_events += 1
        self.on_congestion(now)

    def on_congestion(self, now: int) -> None:
        raise NotImplementedError


class RenoSender(_LossBased):
    protocol = "reno"

    def on_congestion(self, now: int) -> None:
        self.ssthresh = max(self.cwnd / 2.0, 2.0 * self.mss)
        self.set_cwnd(self.ssthresh, "loss")

    def cc_on_rto(self, now: int) -> None:
        self.ssthresh = max(self.cwnd / 2.0, 2.0 * self.mss)
        self.in_recovery = False
        self.set_cwnd(float(self.mss), "rto")

    def cc_on_ack(self, ack: Packet, rtt: float, delivered: int, now: int) -> None:
        self._leave_recovery_if_done()
        if delivered <= 0 or self.in_recovery:
            return
        mss = self.mss
        if self.cwnd < self.ssthresh:
            self.set_cwnd(self.cwnd + delivered * mss, "slow_start")
        else:
            self.set_cwnd(self.cwnd + delivered * mss * mss / self.cwnd, "avoidance")


class CubicSender(_LossBased):
    protocol = "cubic"
    fast_convergence = True

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.w_max = 0.0  # segments
        self.k = 0.0
        self.epoch_start: int | None = None
        self.w_est = 0.0

    def _reduce(self) -> None:
        w = self.cwnd / self.mss
        if self.fast_convergence and w < self.w_max:
            self.w_max = w * (1.0 + CUBIC_BETA) / 2.0
        else:
            self.w_max = w
        self.ssthresh = max(self.cwnd * CUBIC_BETA, 2.0 * self.mss)
        self.epoch_start = None

    def on_congestion(self, now: int) -> None:
        self._reduce()
        self.set_cwnd(self.ssthresh, "loss")

    def cc_on_rto(self, now: int) -> None:
        self._reduce()
        self.in_recovery = False
        self.set_cwnd(float(self.mss), "rto")

    def cc_on_ack(self, ack: Packet, rtt: float, delivered: int, now: int) -> None:
        self._leave_recovery_if_done()
        if delivered <= 0 or self.in_recovery:
            return
        mss = self.mss
        if self.cwnd < self.ssthresh:
            self.set_cwnd(self.cwnd + delivered * mss, "slow_start")
            return
        w = self.cwnd / mss
        if self.epoch_start is None:
            self.epoch_start = now
            if w < self.w_max:
                self.k = cubic_k(self.w_max, w)
            else:
                self.k = 0.0
                self.w_max = w
            self.w_est = w
        t = (now - self.epoch_start) / NS_PER_S
        target = cubic_window(t + self.srtt, self.w_max, self.k)
        if target < w:
            target = w
        elif target > 1.5 * w:
            target = 1.5 * w
        w_new = w + (target - w) / w * delivered
        alpha = 3.0 * (1.0 - CUBIC_BETA) / (1.0 + CUBIC_BETA)
        self.w_est += alpha * delivered / w
        if self.w_est > w_new:
            w_new = self.w_est
        self.set_cwnd(w_new * mss, "avoidance")
