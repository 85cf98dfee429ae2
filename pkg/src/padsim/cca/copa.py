"""Delay-based congestion control targeting a sending rate inversely
proportional to the measured queueing delay.

Queueing delay dq = standing_rtt - base_rtt, where standing_rtt is the
minimum RTT over the last srtt/2 and base_rtt the minimum ever seen.
The target rate is 1 / (delta * dq) segments per second; the window
moves toward it by velocity / (delta * cwnd) segments per ACK, and the
velocity doubles each RTT the direction of movement stays the same.
"""

from __future__ import annotations

from collections import deque

from ..netmodel import MSS
from ..simcore import NS_PER_S
from . import CongestionControl, MIN_CWND_BYTES

DELTA = 0.5
MIN_SEGS = 4.0
MAX_VELOCITY = float(1 << 16)


class Copa(CongestionControl):
    name = "copa"

    def __init__(self, rng=None):
        super().__init__(rng)
        self.cwnd_segs = 10.0
        self.velocity = 1.0
        self.direction = 0
        self.dir_stamp_ns = 0
        self.base_rtt_ns = -1
        self.srtt_ns = 0
        self.slow_start = True
        self._standing: deque = deque()  # (time, rtt), rtt increasing
        self.in_recovery = False
        self.recovery_point = 0

    # ------------------------------------------------------------------
    def _observe_rtt(self, rtt, now):
        self.srtt_ns = rtt if self.srtt_ns == 0 else \
            self.srtt_ns + ((rtt - self.srtt_ns) >> 3)
        if self.base_rtt_ns < 0 or rtt < self.base_rtt_ns:
            self.base_rtt_ns = rtt
        window = max(self.srtt_ns // 2, 1)
        dq = self._standing
        while dq and dq[0][0] < now - window:
            dq.popleft()
        while dq and dq[-1][1] >= rtt:
            dq.pop()
        dq.append((now, rtt))

    def standing_rtt_ns(self) -> int:
        return self._standing[0][1] if self._standing else self.srtt_ns

    # ------------------------------------------------------------------
    def on_ack(self, sample, now, inflight_bytes):
        if sample.rtt_ns > 0:
            self._observe_rtt(sample.rtt_ns, now)
        if self.in_recovery:
            if sample.ack.cum_ack >= self.recovery_point:
                self.in_recovery = False
            return
        if self.base_rtt_ns <= 0 or not self._standing:
            return
        standing = self.standing_rtt_ns()
        dq_ns = standing - self.base_rtt_ns
        current_rate = self.cwnd_segs * NS_PER_S / standing  # segs/s
        if dq_ns <= 0:
            target_rate = float("inf")
        else:
            target_rate = NS_PER_S / (DELTA * dq_ns)
        acked_segs = sample.delivered_bytes / MSS
        if self.slow_start:
            if target_rate > current_rate:
                self.cwnd_segs += acked_segs
                return
            self.slow_start = False
        new_dir = 1 if current_rate < target_rate else -1
        if new_dir != self.direction:
            self.direction = new_dir
            self.velocity = 1.0
            self.dir_stamp_ns = now
        elif now - self.dir_stamp_ns >= self.srtt_ns:
            self.velocity = min(self.velocity * 2.0, MAX_VELOCITY)
            self.dir_stamp_ns = now
        step = self.velocity / (DELTA * self.cwnd_segs) * acked_segs
        self.cwnd_segs = max(self.cwnd_segs + new_dir * step, MIN_SEGS)

    def on_loss_detected(self, lost_range, recovery_point, inflight_bytes, now):
        if self.in_recovery:
            return
        self.in_recovery = True
        self.recovery_point = recovery_point
        self.slow_start = False
        self.cwnd_segs = max(self.cwnd_segs * (1.0 - DELTA), MIN_SEGS)
        self.velocity = 1.0
        self.direction = 0

    def on_rto(self, now):
        self.slow_start = False
        self.in_recovery = False
        self.cwnd_segs = MIN_SEGS
        self.velocity = 1.0
        self.direction = 0

    # ------------------------------------------------------------------
    def cwnd(self) -> int:
        return max(int(self.cwnd_segs * MSS), MIN_CWND_BYTES)

    def pacing_rate(self) -> float:
        srtt = self.srtt_ns if self.srtt_ns > 0 else NS_PER_S // 10
        return 2.0 * self.cwnd() * 8.0 * NS_PER_S / srtt
