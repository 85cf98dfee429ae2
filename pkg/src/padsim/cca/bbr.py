"""Model-based congestion control that paces at a measured bottleneck
bandwidth estimate and sizes the window from a min round-trip estimate.

State machine: STARTUP (gain 2.885 until bandwidth plateaus for three
rounds), DRAIN (inverse gain until inflight fits one BDP), PROBE_BW
(eight-phase gain cycle 1.25, 0.75, 1 x6), and PROBE_RTT (window floor of
four segments for 200 ms whenever the min-RTT estimate goes 10 s without
a refresh).

The bandwidth estimate is a windowed max of per-delivery rate samples
over the last 10 packet-timed rounds; application-limited samples may
only confirm, never raise it. Loss recovery uses packet conservation:
the window collapses to inflight plus one segment and refills by the
delivered byte count per ACK.
"""

from __future__ import annotations

from ..netmodel import MSS
from ..simcore import NS_PER_S
from ..windowed import WindowedMax
from . import CongestionControl, MIN_CWND_BYTES

STARTUP_GAIN = 2.885  # 2/ln(2), plus margin for ACK aggregation
DRAIN_GAIN = 1.0 / STARTUP_GAIN
CYCLE_GAINS = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
BTLBW_WINDOW_ROUNDS = 10
RTPROP_WINDOW_NS = 10 * NS_PER_S
PROBE_RTT_DURATION_NS = 200 * NS_PER_S // 1000
FULL_BW_THRESH = 1.25
FULL_BW_ROUNDS = 3

STARTUP, DRAIN, PROBE_BW, PROBE_RTT = "startup", "drain", "probe_bw", "probe_rtt"


class Bbr(CongestionControl):
    name = "bbr"

    def __init__(self, rng=None):
        super().__init__(rng)
        self.mode = STARTUP
        self.btl_bw_filter = WindowedMax(BTLBW_WINDOW_ROUNDS)
        self.rt_prop_ns = -1
        self.rt_prop_stamp = 0
        # packet-timed round counting
        self.round_count = 0
        self.next_round_delivered = 0
        self.round_start = False
        # startup plateau detection
        self.full_bw = 0.0
        self.full_bw_count = 0
        self.full_bw_reached = False
        # gain cycling
        self.cycle_index = 0
        self.cycle_stamp = 0
        self._loss_in_cycle = False
        # recovery / timeout bookkeeping
        self.in_recovery = False
        self.recovery_point = 0
        self.rto_refill = False
        self._cwnd_val = 0
        # probe-rtt bookkeeping
        self._probe_rtt_done_stamp = -1
        self._prior_mode_full = False
        self._inflight = 0

    # ------------------------------------------------------------------
    def on_ack(self, sample, now, inflight_bytes):
        self._inflight = inflight_bytes
        self._update_round(sample)
        self._update_btl_bw(sample)
        self._update_rt_prop(sample, now)
        if self.in_recovery or self.rto_refill:
            self._grow_conserved(sample)
        if self.in_recovery and sample.ack.cum_ack >= self.recovery_point:
            self.in_recovery = False
        self._check_full_bw()
        self._advance_machine(now, inflight_bytes)

    def on_loss_detected(self, lost_range, recovery_point, inflight_bytes, now):
        self._loss_in_cycle = True
        if not self.in_recovery:
            self.in_recovery = True
            self.recovery_point = recovery_point
            self._cwnd_val = max(inflight_bytes + MSS, MIN_CWND_BYTES)

    def on_rto(self, now):
        self._loss_in_cycle = True
        self.in_recovery = False
        self.rto_refill = True
        self._cwnd_val = MIN_CWND_BYTES

    # ------------------------------------------------------------------
    def _update_round(self, sample):
        if sample.delivered_at_send >= self.next_round_delivered:
            self.round_count += 1
            self.next_round_delivered = sample.delivered_total
            self.round_start = True
        else:
            self.round_start = False

    def _update_btl_bw(self, sample):
        bw = sample.delivery_rate_bps
        if sample.is_app_limited and bw <= self.btl_bw_filter.current():
            return
        self.btl_bw_filter.update(self.round_count, bw)

    def _update_rt_prop(self, sample, now):
        expired = now - self.rt_prop_stamp > RTPROP_WINDOW_NS
        if sample.rtt_ns > 0 and (sample.rtt_ns <= self.rt_prop_ns
                                  or self.rt_prop_ns < 0 or expired):
            self.rt_prop_ns = sample.rtt_ns
            self.rt_prop_stamp = now

    def _grow_conserved(self, sample):
        self._cwnd_val += sample.delivered_bytes
        target = self._model_cwnd()
        if self._cwnd_val >= target:
            self._cwnd_val = target
            if self.rto_refill:
                self.rto_refill = False

    def _check_full_bw(self):
        if self.full_bw_reached or not self.round_start:
            return
        bw = self.btl_bw_filter.current()
        if bw >= self.full_bw * FULL_BW_THRESH:
            self.full_bw = bw
            self.full_bw_count = 0
            return
        self.full_bw_count += 1
        if self.full_bw_count >= FULL_BW_ROUNDS:
            self.full_bw_reached = True

    def _advance_machine(self, now, inflight):
        if self.mode == STARTUP and self.full_bw_reached:
            self.mode = DRAIN
        if self.mode == DRAIN and inflight <= self._bdp_bytes(1.0):
            self._enter_probe_bw(now)
        if self.mode == PROBE_BW:
            self._maybe_cycle(now, inflight)
        self._maybe_probe_rtt(now, inflight)

    def _enter_probe_bw(self, now):
        self.mode = PROBE_BW
        # random start phase, skipping the draining (0.75) slot
        if self._rng is not None:
            idx = int(self._rng.integers(0, len(CYCLE_GAINS) - 1))
            self.cycle_index = idx if idx == 0 else idx + 1
        else:
            self.cycle_index = 0
        self.cycle_stamp = now
        self._loss_in_cycle = False

    def _maybe_cycle(self, now, inflight):
        gain = CYCLE_GAINS[self.cycle_index]
        full_length = now - self.cycle_stamp > max(self.rt_prop_ns, 0)
        if gain == 1.0:
            advance = full_length
        elif gain > 1.0:
            advance = full_length and (
                self._loss_in_cycle or inflight >= self._bdp_bytes(gain))
        else:
            advance = full_length or inflight <= self._bdp_bytes(1.0)
        if advance:
            self.cycle_index = (self.cycle_index + 1) % len(CYCLE_GAINS)
            self.cycle_stamp = now
            self._loss_in_cycle = False

    def _maybe_probe_rtt(self, now, inflight):
        if self.mode == PROBE_RTT:
            if self._probe_rtt_done_stamp < 0 and inflight <= MIN_CWND_BYTES:
                self._probe_rtt_done_stamp = now + PROBE_RTT_DURATION_NS
            if 0 <= self._probe_rtt_done_stamp <= now:
                self.rt_prop_stamp = now
                self._exit_probe_rtt(now)
            return
        expired = now - self.rt_prop_stamp > RTPROP_WINDOW_NS
        if expired and self.rt_prop_ns > 0:
            self.mode = PROBE_RTT
            self._probe_rtt_done_stamp = -1

    def _exit_probe_rtt(self, now):
        if self.full_bw_reached:
            self._enter_probe_bw(now)
        else:
            self.mode = STARTUP

    # ------------------------------------------------------------------
    def _btl_bw_bps(self) -> float:
        if self.btl_bw_filter:
            return self.btl_bw_filter.current()
        # no delivery sample yet: initial window over the observed or an
        # assumed round trip
        rtt = self.rt_prop_ns if self.rt_prop_ns > 0 else NS_PER_S // 1000
        return 10 * MSS * 8 * NS_PER_S / rtt

    def _bdp_bytes(self, gain: float) -> int:
        if self.rt_prop_ns <= 0:
            return 10 * MSS
        return int(gain * self._btl_bw_bps() / 8.0 * self.rt_prop_ns / NS_PER_S)

    def _model_cwnd(self) -> int:
        gain = 2.0 if self.full_bw_reached else STARTUP_GAIN
        return max(self._bdp_bytes(gain), MIN_CWND_BYTES)

    def cwnd(self) -> int:
        if self.mode == PROBE_RTT:
            return MIN_CWND_BYTES
        if self.in_recovery or self.rto_refill:
            return max(self._cwnd_val, MIN_CWND_BYTES)
        return self._model_cwnd()

    def pacing_gain(self) -> float:
        if self.mode == STARTUP:
            return STARTUP_GAIN
        if self.mode == DRAIN:
            return DRAIN_GAIN
        if self.mode == PROBE_BW:
            return CYCLE_GAINS[self.cycle_index]
        return 1.0

    def pacing_rate(self) -> float:
        return self.pacing_gain() * self._btl_bw_bps()
