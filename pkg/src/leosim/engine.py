"""Discrete-event engine: integer-nanosecond clock, event heap, seeded RNG streams."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass
from typing import Any, Callable

NS_PER_S = 1_000_000_000


def seconds(t_ns: int) -> float:
    return t_ns / NS_PER_S


def to_ns(t_s: float) -> int:
    return int(round(t_s * NS_PER_S))


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(frozen=True)
class RunSummary:
    events_dispatched: int
    final_time: int


# Heap entries are lists [fire_time, sequence, callback, payload]. (fire_time,
# sequence) is unique, so comparison never reaches the callback. Cancelling
# sets the callback slot to None; the entry is skipped when it surfaces.
Event = list


class Simulator:
    """Single-threaded event loop.

    ``now`` is the virtual clock in integer nanoseconds. Events scheduled for
    the same instant fire in insertion order.
    """

    __slots__ = ("now", "_heap", "_seq", "dispatched")

    def __init__(self) -> None:
        self.now = 0
        self._heap: list[Event] = []
        self._seq = 0
        self.dispatched = 0

    def schedule(self, at: int, callback: Callable[[Any], None], payload: Any = None) -> Event:
        if at < self.now:
            raise SchedulingError(f"event at t={at}ns scheduled from t={self.now}ns")
        self._seq += 1
        entry = [at, self._seq, callback, payload]
        heapq.heappush(self._heap, entry)
        return entry

    def schedule_in(self, delay: int, callback: Callable[[Any], None], payload: Any = None) -> Event:
        return self.schedule(self.now + delay, callback, payload)

    @staticmethod
    def cancel(handle: Event | None) -> None:
        if handle is not None:
            handle[2] = None

    def pending(self) -> list[Event]:
        """Live (non-cancelled) entries, in no particular order."""
        return [e for e in self._heap if e[2] is not None]

    def run_until(self, t_end: int) -> RunSummary:
        """Dispatch every event with fire_time <= t_end, then park the clock at t_end."""
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap and heap[0][0] <= t_end:
            entry = pop(heap)
            cb = entry[2]
            if cb is None:
                continue
            self.now = entry[0]
            cb(entry[3])
            n += 1
        if t_end > self.now:
            self.now = t_end
        self.dispatched += n
        return RunSummary(n, self.now)


class RngStream:
    """Named random stream; (seed, label) fully determines the sequence.

    The underlying Mersenne Twister is seeded from a SHA-256 digest so the
    derivation does not depend on Python's per-process string hashing.
    """

    __slots__ = ("seed", "label", "_rng", "random")

    def __init__(self, seed: int, label: str) -> None:
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.label = label
        digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
        self._rng = random.Random(int.from_bytes(digest[:16], "big"))
        self.random = self._rng.random

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise ValueError(f"empty range [{lo}, {hi})")
        x = lo + (hi - lo) * self._rng.random()
        # guard the rounding case lo + (hi-lo)*u == hi
        return x if x < hi else lo

    def bernoulli(self, p: float) -> bool:
        return self._rng.random() < p
