"""Loss-based congestion control with a cubic window growth curve.

On a loss episode the window shrinks by the multiplicative factor beta
and then regrows along W(t) = C*(t - K)^3 + w_max, where K is chosen so
the curve plateaus at the old maximum. A parallel linear estimate keeps
growth at least as fast as classic AIMD in the friendly region.
"""

from __future__ import annotations

from ..netmodel import MSS
from ..simcore import NS_PER_S
from . import CongestionControl, MIN_CWND_BYTES

C_SCALE = 0.4  # segments / s^3
BETA = 0.7
MIN_SEGS = 4.0


class Cubic(CongestionControl):
    name = "cubic"

    def __init__(self, rng=None):
        super().__init__(rng)
        self.cwnd_segs = 10.0
        self.ssthresh_segs = float("inf")
        self.w_max = 0.0
        self.k_s = 0.0
        self.epoch_start_ns = -1
        self.srtt_ns = 0
        self.in_recovery = False
        self.recovery_point = 0

    # ------------------------------------------------------------------
    def on_ack(self, sample, now, inflight_bytes):
        if sample.rtt_ns > 0:
            if self.srtt_ns == 0:
                self.srtt_ns = sample.rtt_ns
            else:
                self.srtt_ns += (sample.rtt_ns - self.srtt_ns) >> 3
        if self.in_recovery:
            if sample.ack.cum_ack >= self.recovery_point:
                self.in_recovery = False
            return
        acked_segs = sample.delivered_bytes / MSS
        if self.cwnd_segs < self.ssthresh_segs:
            self.cwnd_segs += acked_segs
            return
        self._cubic_update(now, acked_segs)

    def _cubic_update(self, now, acked_segs):
        if self.epoch_start_ns < 0:
            self.epoch_start_ns = now
            if self.w_max < self.cwnd_segs:
                self.w_max = self.cwnd_segs
                self.k_s = 0.0
            else:
                self.k_s = ((self.w_max - self.cwnd_segs) / C_SCALE) ** (1.0 / 3.0)
        t_s = (now - self.epoch_start_ns) / NS_PER_S
        target = C_SCALE * (t_s - self.k_s) ** 3 + self.w_max
        if target > self.cwnd_segs:
            self.cwnd_segs += (target - self.cwnd_segs) / self.cwnd_segs * acked_segs
        else:
            self.cwnd_segs += 0.01 / self.cwnd_segs * acked_segs
        # AIMD-friendly region: match the linear estimate if it is ahead
        if self.srtt_ns > 0:
            rtts = (now - self.epoch_start_ns) / self.srtt_ns
            w_est = (self.w_max * BETA
                     + 3.0 * (1.0 - BETA) / (1.0 + BETA) * rtts)
            if w_est > self.cwnd_segs:
                self.cwnd_segs = w_est

    def on_loss_detected(self, lost_range, recovery_point, inflight_bytes, now):
        if self.in_recovery:
            return
        self.in_recovery = True
        self.recovery_point = recovery_point
        if self.cwnd_segs < self.w_max:
            # fast convergence: release share faster on consecutive losses
            self.w_max = self.cwnd_segs * (2.0 - BETA) / 2.0
        else:
            self.w_max = self.cwnd_segs
        self.cwnd_segs = max(self.cwnd_segs * BETA, MIN_SEGS)
        self.ssthresh_segs = self.cwnd_segs
        self.epoch_start_ns = -1

    def on_rto(self, now):
        self.w_max = self.cwnd_segs
        self.ssthresh_segs = max(self.cwnd_segs * BETA, MIN_SEGS)
        self.cwnd_segs = MIN_SEGS
        self.epoch_start_ns = -1
        self.in_recovery = False

    # ------------------------------------------------------------------
    def cwnd(self) -> int:
        return max(int(self.cwnd_segs * MSS), MIN_CWND_BYTES)

    def pacing_rate(self) -> float:
        srtt = self.srtt_ns if self.srtt_ns > 0 else NS_PER_S // 10
        return 2.0 * self.cwnd() * 8.0 * NS_PER_S / srtt
