"""Delay-based congestion control that steers the window so the number
of packets queued in the network stays between two thresholds.

Once per packet-timed round: diff = cwnd * (rtt - base_rtt) / rtt is the
backlog estimate in segments, where rtt is the smallest sample seen that
round and base_rtt the smallest ever. Below alpha the window grows by
one segment, at or above beta it shrinks by one.
"""

from __future__ import annotations

from ..netmodel import MSS
from ..simcore import NS_PER_S
from . import CongestionControl, MIN_CWND_BYTES

ALPHA = 2.0
BETA = 4.0
GAMMA = 1.0
MIN_SEGS = 4.0


class Vegas(CongestionControl):
    name = "vegas"

    def __init__(self, rng=None):
        super().__init__(rng)
        self.cwnd_segs = 10.0
        self.base_rtt_ns = -1
        self.round_rtt_min = -1
        self.next_round_delivered = 0
        self.slow_start = True
        self.srtt_ns = 0
        self.in_recovery = False
        self.recovery_point = 0

    def on_ack(self, sample, now, inflight_bytes):
        rtt = sample.rtt_ns
        if rtt > 0:
            self.srtt_ns = rtt if self.srtt_ns == 0 else \
                self.srtt_ns + ((rtt - self.srtt_ns) >> 3)
            if self.base_rtt_ns < 0 or rtt < self.base_rtt_ns:
                self.base_rtt_ns = rtt
            if self.round_rtt_min < 0 or rtt < self.round_rtt_min:
                self.round_rtt_min = rtt
        if self.in_recovery:
            if sample.ack.cum_ack >= self.recovery_point:
                self.in_recovery = False
            return
        if self.slow_start:
            self.cwnd_segs += sample.delivered_bytes / MSS
        if sample.delivered_at_send >= self.next_round_delivered:
            self.next_round_delivered = sample.delivered_total
            self._evaluate_round()
            self.round_rtt_min = -1

    def _evaluate_round(self):
        if self.round_rtt_min <= 0 or self.base_rtt_ns <= 0:
            return
        rtt = self.round_rtt_min
        diff = self.cwnd_segs * (rtt - self.base_rtt_ns) / rtt
        if self.slow_start:
            if diff > GAMMA:
                self.slow_start = False
                target = self.cwnd_segs * self.base_rtt_ns / rtt
                self.cwnd_segs = min(self.cwnd_segs, target + 1.0)
        elif diff < ALPHA:
            self.cwnd_segs += 1.0
        elif diff >= BETA:
            self.cwnd_segs -= 1.0
        self.cwnd_segs = max(self.cwnd_segs, MIN_SEGS)

    def on_loss_detected(self, lost_range, recovery_point, inflight_bytes, now):
        if self.in_recovery:
            return
        self.in_recovery = True
        self.recovery_point = recovery_point
        self.slow_start = False
        self.cwnd_segs = max(self.cwnd_segs * 0.5, MIN_SEGS)

    def on_rto(self, now):
        self.slow_start = False
        self.in_recovery = False
        self.cwnd_segs = MIN_SEGS

    def cwnd(self) -> int:
        return max(int(self.cwnd_segs * MSS), MIN_CWND_BYTES)

    def pacing_rate(self) -> float:
        srtt = self.srtt_ns if self.srtt_ns > 0 else NS_PER_S // 10
        return 2.0 * self.cwnd() * 8.0 * NS_PER_S / srtt
