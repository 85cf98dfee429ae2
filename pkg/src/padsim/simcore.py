"""Deterministic discrete-event core.

Time is an integer nanosecond count. Events fire in (fire_time, insertion
sequence) order, so two events scheduled for the same instant run in the
order they were scheduled, independent of hash seeds or platform.
"""

from __future__ import annotations

import hashlib
import heapq
from typing import Callable

import numpy as np

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000


def seconds_to_ns(x: float) -> int:
    return int(round(x * NS_PER_S))


def ns_to_seconds(t: int) -> float:
    return t / NS_PER_S


def stream_seed(root_seed: int, name: str) -> int:
    """Stable 64-bit seed for a named stream, independent of platform."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class Simulator:
    """Event loop with named, independently seeded RNG streams.

    Each component draws from its own stream, so adding a component (or a
    flow) never perturbs another component's random sequence.
    """

    def __init__(self, seed: int = 0):
        self.now: int = 0
        self.seed = seed
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self._streams: dict[str, np.random.Generator] = {}
        self.trace: list[tuple[int, int, str]] | None = None

    def rng(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.Generator(np.random.PCG64(stream_seed(self.seed, name)))
            self._streams[name] = gen
        return gen

    def schedule(self, at: int, callback: Callable[[], None]) -> int:
        if at < self.now:
            raise SchedulingError(
                f"event scheduled at {at} ns, before current clock {self.now} ns"
            )
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._heap, (at, seq, callback))
        return seq

    def schedule_after(self, delay: int, callback: Callable[[], None]) -> int:
        return self.schedule(self.now + delay, callback)

    def run_until(self, end: int) -> int:
        """Process every event with fire_time <= end; clock ends at `end`.

        Events scheduled by handlers for the current instant fire in the same
        run, after the scheduling handler returns.
        """
        heap = self._heap
        trace = self.trace
        while heap and heap[0][0] <= end:
            at, seq, callback = heapq.heappop(heap)
            assert at >= self.now, "event popped out of order"
            self.now = at
            if trace is not None:
                trace.append((at, seq, getattr(callback, "__qualname__", repr(callback))))
            callback()
        self.now = end
        return self.now

    def pending(self) -> int:
        return len(self._heap)
