"""Evaluation quantities: goodput, goodput ratio, Jain's index, normalised delay, CDFs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import NS_PER_S

SERIES_KINDS = ("goodput", "rtt", "qlen", "cwnd", "utilisation")


@dataclass
class MetricsSeries:
    kind: str
    entity: str
    times: np.ndarray  # int64 ns, strictly increasing
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in SERIES_KINDS:
            raise ValueError(f"unknown series kind {self.kind!r}")
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("series timestamps must be strictly increasing")

    def window(self, t0: int, t1: int) -> "MetricsSeries":
        m = (self.times >= t0) & (self.times < t1)
        return MetricsSeries(self.kind, self.entity, self.times[m], self.values[m])


class StepSchedule:
    """Piecewise-constant function of time: ``values[i]`` holds from ``times[i]``."""

    def __init__(self, times, values) -> None:
        self.times = np.asarray(times, dtype=np.int64)
        self.values = np.asarray(values, dtype=float)
        if self.times.size == 0 or self.times.size != self.values.size:
            raise ValueError("step schedule needs matching, non-empty times and values")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("step schedule times must be sorted")

    @classmethod
    def constant(cls, value: float) -> "StepSchedule":
        return cls([0], [value])

    def __call__(self, t):
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(i, 0, None)]


def first_deliveries(rx_time, rx_seq, rx_len) -> tuple[np.ndarray, np.ndarray]:
    """Times and sizes of the first arrival of each distinct segment."""
    t = np.asarray(rx_time, dtype=np.int64)
    s = np.asarray(rx_seq, dtype=np.int64)
    ln = np.asarray(rx_len, dtype=np.int64)
    if t.size == 0:
        return t, ln
    _, first = np.unique(s, return_index=True)
    first.sort()
    return t[first], ln[first]


def goodput(rx_time, rx_seq, rx_len, t0: int, t1: int) -> float:
    """Unique payload bits per second delivered in [t0, t1); duplicates count once."""
    if t1 <= t0:
        raise ValueError("window must have t1 > t0")
    t, ln = first_deliveries(rx_time, rx_seq, rx_len)
    if t.size == 0:
        return 0.0
    lo, hi = np.searchsorted(t, [t0, t1], side="left")
    return float(ln[lo:hi].sum()) * 8.0 * NS_PER_S / (t1 - t0)


def goodput_series(rx_time, rx_seq, rx_len, t_end: int, bin_ns: int, entity: str = "",
                   t_start: int = 0) -> MetricsSeries:
    """Goodput averaged over consecutive bins; sample time is the bin end."""
    t, ln = first_deliveries(rx_time, rx_seq, rx_len)
    edges = np.arange(t_start, t_end + 1, bin_ns, dtype=np.int64)
    if edges.size < 2:
        return MetricsSeries("goodput", entity, [], [])
    sums, _ = np.histogram(t, bins=edges, weights=ln)
    return MetricsSeries("goodput", entity, edges[1:], sums * 8.0 * NS_PER_S / bin_ns)


def jain_index(values) -> float:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("jain_index needs at least one value")
    if np.any(x < 0):
        raise ValueError("jain_index needs non-negative values")
    top = float(x.max())
    if top == 0.0:
        raise ValueError("jain_index is undefined for all-zero input")
    x = x / top  # keeps the squares away from under/overflow
    sq = float(np.dot(x, x))
    s = float(x.sum())
    return s * s / (x.size * sq)


def goodput_ratio(a: float, b: float) -> float | None:
    """min/max of two goodputs; None when both are zero."""
    hi = max(a, b)
    if hi <= 0.0:
        return None
    return min(a, b) / hi


def normalised_delay(rtt_times, rtts, base_rtt) -> float:
    """Mean of rtt/base over samples. ``base_rtt`` is a float or a StepSchedule."""
    r = np.asarray(rtts, dtype=float)
    if r.size == 0:
        return float("nan")
    if isinstance(base_rtt, StepSchedule):
        base = base_rtt(np.asarray(rtt_times, dtype=np.int64))
    else:
        if base_rtt <= 0:
            raise ValueError("base_rtt must be positive")
        base = float(base_rtt)
    return float(np.mean(r / base))


def cdf(values) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF as (value, P[X <= value]) at each distinct value."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("cdf of an empty sample")
    uniq, idx = np.unique(x, return_index=True)
    counts = np.append(idx[1:], x.size)
    return [(float(v), float(c) / x.size) for v, c in zip(uniq, counts)]


def cdf_at(points: list[tuple[float, float]], value: float) -> float:
    frac = 0.0
    for v, f in points:
        if v > value:
            break
        frac = f
    return frac


def write_series_csv(path: Path, series: list[MetricsSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "entity", "kind", "value"])
        for s in series:
            for t, v in zip(s.times.tolist(), s.values.tolist()):
                w.writerow([f"{t / NS_PER_S:.9f}", s.entity, s.kind, repr(float(v))])


def read_series_csv(path: Path) -> list[MetricsSeries]:
    rows: dict[tuple[str, str], tuple[list, list]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["kind"], row["entity"])
            ts, vs = rows.setdefault(key, ([], []))
            ts.append(int(round(float(row["time_s"]) * NS_PER_S)))
            vs.append(float(row["value"]))
    return [MetricsSeries(k, e, ts, vs) for (k, e), (ts, vs) in rows.items()]
