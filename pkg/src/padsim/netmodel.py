"""Network path model: packets, ACKs, the fluctuating one-way delay process,
the drop-tail bottleneck queue, and the per-packet-ACK receiver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from padsim.simcore import NS_PER_MS, Simulator

MSS = 1500  # bytes, fixed segment size

# Decrease-rate clamp for interpolated delay segments. Keeping the slope
# strictly above -1 guarantees t + d(t) is increasing, i.e. packets that
# enter the link in order leave it in order.
MAX_DOWN_SLOPE = 0.999

DELAY_FLOOR_NS = 1 * NS_PER_MS


@dataclass(slots=True)
class Packet:
    flow_id: int
    seq: int              # byte offset of first payload byte
    size: int             # payload bytes
    send_time: int
    is_retransmission: bool = False
    probe_marked: bool = False

    @property
    def end_seq(self) -> int:
        return self.seq + self.size


@dataclass(slots=True)
class AckRecord:
    flow_id: int
    cum_ack: int                                  # next byte expected in order
    sack_blocks: tuple[tuple[int, int], ...]      # disjoint, ascending, above cum_ack
    acked_new_bytes: int                          # receiver-side newly stored bytes
    gen_time: int
    arrival_time: int = -1                        # stamped at the sender


@dataclass(slots=True)
class RateSample:
    """One delivery-rate measurement, attached to the ACK that produced it.

    interval_ns is max(ack gap, span of send times inside the newly acked
    byte range); for the common one-packet delivery the send span is zero
    and the ACK arrival gap alone sets the rate, which is exactly what a
    gap-based delivery-rate estimator computes.
    """

    delivered_bytes: int
    interval_ns: int
    rtt_ns: int
    is_app_limited: bool
    ack: AckRecord
    send_span_ns: int = 0
    delivered_total: int = 0      # flow's delivered counter after this ACK
    delivered_at_send: int = 0    # delivered counter when the newest acked pkt was sent

    @property
    def delivery_rate_bps(self) -> float:
        if self.interval_ns <= 0:
            return 0.0
        return self.delivered_bytes * 8e9 / self.interval_ns


class DelayProcess:
    """Piecewise-linear one-way propagation delay.

    Anchor delays are drawn i.i.d. Gaussian(mean, stddev) on a fixed grid
    (default every 100 ms) and linearly interpolated. Each anchor is clamped
    to a floor and to a maximum decrease rate versus the previous (clamped)
    anchor, so arrival order is preserved no matter how unlucky the draws.
    """

    def __init__(
        self,
        mean_ns: int,
        stddev_ns: int,
        update_interval_ns: int,
        rng: np.random.Generator | None = None,
        floor_ns: int = DELAY_FLOOR_NS,
        anchors_ns: list[int] | None = None,
    ):
        if update_interval_ns <= 0:
            raise ValueError("update_interval_ns must be positive")
        self.mean_ns = mean_ns
        self.stddev_ns = stddev_ns
        self.interval_ns = update_interval_ns
        self.floor_ns = floor_ns
        self._rng = rng
        self._max_drop = int(MAX_DOWN_SLOPE * update_interval_ns)
        self._anchors: list[int] = []
        if anchors_ns is not None:
            # Preset anchors (tests); still clamped so order preservation holds.
            for a in anchors_ns:
                self._anchors.append(self._clamp(a))
            self._frozen = True
        else:
            self._anchors.append(self._clamp(self._draw()))
            self._frozen = False

    def _draw(self) -> int:
        if self.stddev_ns == 0 or self._rng is None:
            return self.mean_ns
        return int(round(self.mean_ns + self.stddev_ns * self._rng.standard_normal()))

    def _clamp(self, candidate: int) -> int:
        lo = self.floor_ns
        if self._anchors:
            lo = max(lo, self._anchors[-1] - self._max_drop)
        return max(candidate, lo)

    def _anchor(self, index: int) -> int:
        anchors = self._anchors
        while len(anchors) <= index:
            if self._frozen:
                # Hold the last preset anchor; slope 0 keeps ordering.
                anchors.append(anchors[-1])
            else:
                anchors.append(self._clamp(self._draw()))
        return anchors[index]

    def delay_at(self, t: int) -> int:
        if t < 0:
            raise ValueError("delay queried for negative time")
        interval = self.interval_ns
        index, offset = divmod(t, interval)
        a0 = self._anchor(index)
        a1 = self._anchor(index + 1)
        return a0 + (a1 - a0) * offset // interval

    __call__ = delay_at


class BottleneckLink:
    """Shared drop-tail FIFO bottleneck followed by the fluctuating link.

    Service is one packet at a time at `rate_bps`; `capacity` counts waiting
    packets (the packet in service is not queued). A packet finishing service
    at time f reaches the receiver at f + delay(f).
    """

    def __init__(
        self,
        sim: Simulator,
        rate_bps: float,
        capacity_pkts: int,
        delay_fn: Callable[[int], int],
        deliver: Callable[[Packet, int], None],
    ):
        self.sim = sim
        self.rate_bps = rate_bps
        self.capacity = capacity_pkts
        self.delay_fn = delay_fn
        self.deliver = deliver
        self._waiting: list[Packet] = []
        self._wait_head = 0  # index of logical queue head; avoids O(n) pops
        self._busy = False
        self.drops: dict[int, int] = {}
        self.on_drop: Callable[[Packet, int], None] | None = None

    @property
    def occupancy(self) -> int:
        return len(self._waiting) - self._wait_head

    def serialization_ns(self, size: int) -> int:
        return int(round(size * 8e9 / self.rate_bps))

    def send(self, pkt: Packet) -> bool:
        """Offer a packet at the current instant; False means tail-dropped."""
        if self._busy:
            if self.occupancy >= self.capacity:
                self.drops[pkt.flow_id] = self.drops.get(pkt.flow_id, 0) + 1
                if self.on_drop is not None:
                    self.on_drop(pkt, self.sim.now)
                return False
            self._waiting.append(pkt)
            return True
        self._start_service(pkt)
        return True

    def _start_service(self, pkt: Packet) -> None:
        self._busy = True
        finish = self.sim.now + self.serialization_ns(pkt.size)
        self.sim.schedule(finish, lambda p=pkt: self._finish_service(p))

    def _finish_service(self, pkt: Packet) -> None:
        now = self.sim.now
        arrival = now + self.delay_fn(now)
        self.sim.schedule(arrival, lambda p=pkt, t=arrival: self.deliver(p, t))
        if self.occupancy > 0:
            head = self._waiting[self._wait_head]
            self._waiting[self._wait_head] = None  # drop reference
            self._wait_head += 1
            if self._wait_head > 64 and self._wait_head * 2 > len(self._waiting):
                del self._waiting[: self._wait_head]
                self._wait_head = 0
            self._start_service(head)
        else:
            self._busy = False


MAX_SACK_BLOCKS = 4


class Receiver:
    """Reassembles the byte stream and emits one SACK-bearing ACK per packet
    immediately on arrival (no delayed ACK)."""

    def __init__(self, flow_id: int):
        self.flow_id = flow_id
        self.rcv_next = 0                     # first byte not yet received in order
        self._ranges: list[list[int]] = []    # disjoint [lo, hi) above rcv_next, ascending
        self.total_bytes = 0                  # unique payload bytes stored

    def on_data(self, pkt: Packet, now: int) -> AckRecord:
        new_bytes = self._store(pkt.seq, pkt.end_seq)
        self.total_bytes += new_bytes
        return AckRecord(
            flow_id=self.flow_id,
            cum_ack=self.rcv_next,
            sack_blocks=self._sack_blocks(pkt.seq),
            acked_new_bytes=new_bytes,
            gen_time=now,
        )

    def _sack_blocks(self, seq: int) -> tuple:
        """Up to four SACK ranges, starting at the range holding the packet
        that triggered this ACK and wrapping upward, so successive ACKs
        rotate through every out-of-order range instead of pinning the
        lowest four forever."""
        ranges = self._ranges
        n = len(ranges)
        if n == 0:
            return ()
        start = 0
        for i, (lo, hi) in enumerate(ranges):
            if lo <= seq < hi:
                start = i
                break
        count = min(MAX_SACK_BLOCKS, n)
        return tuple(
            (ranges[(start + k) % n][0], ranges[(start + k) % n][1])
            for k in range(count)
        )

    def _store(self, lo: int, hi: int) -> int:
        lo = max(lo, self.rcv_next)
        if lo >= hi:
            return 0
        ranges = self._ranges
        merged = [lo, hi]
        out = []
        added = hi - lo
        placed = False
        for r in ranges:
            if r[1] < merged[0]:
                out.append(r)
            elif r[0] > merged[1]:
                if not placed:
                    out.append(merged)
                    placed = True
                out.append(r)
            else:
                # overlap or adjacency: fold into merged; discount the part of
                # the *original* [lo, hi) this range already covered
                overlap = min(r[1], hi) - max(r[0], lo)
                if overlap > 0:
                    added -= overlap
                merged[0] = min(merged[0], r[0])
                merged[1] = max(merged[1], r[1])
        if not placed:
            out.append(merged)
        out.sort(key=lambda r: r[0])
        # advance the in-order edge
        while out and out[0][0] <= self.rcv_next:
            head = out.pop(0)
            self.rcv_next = max(self.rcv_next, head[1])
        self._ranges = out
        return max(added, 0)


def resolve_highest_seq(ack: AckRecord) -> int:
    """Largest byte offset the receiver proves it has seen: the cumulative
    edge or the right edge of the highest SACK block, whichever is larger."""
    if ack.sack_blocks:
        return max(ack.cum_ack, ack.sack_blocks[-1][1])
    return ack.cum_ack
