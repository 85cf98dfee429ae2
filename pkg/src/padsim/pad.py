"""ACK rescheduling shim between the socket layer and a congestion
control algorithm.

The shim watches the ACK stream a flow receives, estimates the central
ACK arrival rate lambda from acknowledged-byte progress over a
multi-RTT window, and when an ACK arrives measurably ahead of the
lambda schedule
(compression: queued ACKs released in a burst) it holds that ACK and
later ones in a FIFO buffer, re-releasing them paced at mu = k * lambda
with k slightly above one, so the algorithm's rate samples reflect the
path instead of the burst.

Two modes:

* passive: every ACK is forwarded the instant it arrives. An ACK
  arriving more than guard_fraction of its expected inter-ACK gap ahead
  of schedule flips the shim to positive.
* positive: ACKs are buffered and released by a grant timer, each grant
  spaced bytes/mu after the previous delivery. Arrivals on or behind
  that schedule are granted immediately with zero added delay; once no
  arrival has needed holding for idle_reset_rtts worth of smoothed RTT
  the episode is over and the shim drops back to passive.

ACKs for bandwidth-probing packets are never delayed: the buffer is
drained first (preserving arrival order) and the probe ACK forwarded at
once with its raw timing, so the algorithm's probe measurement is not
distorted. Probe episodes are recognized directly from the algorithm's
pacing gain by default (the shim and the algorithm share a process, so
the notification is free); with the direct channel disabled they are
inferred from the send rate exceeding mu over a sliding one-RTT window.
The inference is unreliable exactly when the algorithm is already
overdriving the path, since chronic overshoot and deliberate probing
then look alike, which is why it is not the default. A retransmission
timeout discards all shim state and fails open to pass-through, as does
buffer overflow past twice the estimated bandwidth-delay product worth
of acknowledged bytes.

Delivery semantics: a paced grant stretches the sample's measurement
interval to the grant schedule (bytes/mu, never shortening it) and adds
the hold to the sample's RTT; pass-through and flushed entries keep
their raw arrival timing. Every forwarded sample's implied delivery
rate is additionally bounded by k times the fastest windowed arrival
rate the estimator has measured, because a sample above that bound
reports acknowledgment bunching, not delivery (see _service_cap).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .netmodel import resolve_highest_seq

PASSIVE = "passive"
POSITIVE = "positive"

DEFAULT_SRTT_NS = 100_000_000

# Largest acknowledged advance still treated as a single segment
# (Ethernet MTU plus slack). A cumulative jump past this aggregates
# several segments' worth of service time into one acknowledgment, so
# its per-byte pair rate carries no information about honest spacing.
SINGLE_SEGMENT_MAX = 1600


@dataclass
class PadConfig:
    k: float = 1.025
    window_rtts: float = 16.0
    guard_fraction: float = 0.25
    idle_reset_rtts: float = 1.0
    overflow_bdp_multiple: float = 2.0
    direct_probe_channel: bool = True


class RateEstimator:
    """ACK arrival rate from (time, acknowledged byte total) records.

    The byte coordinate is the flow's cumulative newly-acknowledged
    byte count. While no loss is in play it advances exactly as the
    highest acknowledged sequence does; during loss recovery the
    sequence edge freezes (everything beyond the hole was already
    SACKed) while acknowledgments keep arriving, and the cumulative
    count keeps measuring the rate the algorithm actually receives
    acknowledgment information.

    The rate is the slope between the newest record and the most recent
    record at least window_rtts * srtt old; while the history spans less
    than that, the slope is taken over the full available span, but
    never over less than one RTT: a sub-RTT slope measures how fast a
    single flight was serviced, not how fast acknowledgments arrive.
    Records with non-increasing timestamps are dropped (degenerate span
    keeps the previous estimate; the skipped bytes surface in the next
    record since the coordinate is cumulative).
    """

    def __init__(self, window_rtts: float = 16.0):
        self.window_rtts = window_rtts
        self._records: deque = deque()  # (t_ns, acked byte total)
        self._tail: deque = deque()     # records from the span midpoint on
        self._peaks: deque = deque()    # (t_ns, rate) sliding-window maxima
        self.highest_seq = -1

    def record(self, now: int, highest_seq: int,
               acked_total: int | None = None,
               srtt_ns: int = 0) -> None:
        if highest_seq > self.highest_seq:
            self.highest_seq = highest_seq
        if acked_total is None:
            # ACK carried no new acknowledgment (duplicate, or window
            # update): the sequence edge above still matters for probe
            # matching but there is no progress point to add
            return
        recs = self._records
        if recs and (acked_total <= recs[-1][1] or now <= recs[-1][0]):
            return
        prev = recs[-1] if recs else None
        recs.append((now, acked_total))
        self._tail.append((now, acked_total))
        lam = self.rate(now, srtt_ns)
        if lam is not None:
            peaks = self._peaks
            while peaks and peaks[-1][1] <= lam:
                peaks.pop()
            peaks.append((now, lam))

    def rate(self, now: int, srtt_ns: int):
        """Estimated ACK arrival rate in bytes per nanosecond, or None."""
        recs = self._records
        if len(recs) < 2:
            return None
        if srtt_ns <= 0:
            srtt_ns = DEFAULT_SRTT_NS
        horizon = now - int(self.window_rtts * srtt_ns)
        while len(recs) > 2 and recs[1][0] <= horizon:
            recs.popleft()
        t0, s0 = recs[0]
        t1, s1 = recs[-1]
        if t1 <= t0 or s1 <= s0 or t1 - t0 < srtt_ns:
            return None
        return (s1 - s0) / (t1 - t0)

    def live_rate(self, now: int, srtt_ns: int):
        """Slope over roughly the two most recent RTTs, or None.

        The full-window slope deliberately averages across several
        seconds; this is the short-horizon counterpart, used to detect
        when that average lags what the path is delivering right now
        (flow start, rebuild after loss). Spans under one RTT are not
        rated: they measure how fast one flight was serviced.
        """
        recs = self._records
        if len(recs) < 2:
            return None
        if srtt_ns <= 0:
            srtt_ns = DEFAULT_SRTT_NS
        horizon = recs[-1][0] - 2 * srtt_ns
        lo, hi = 0, len(recs) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if recs[mid][0] < horizon:
                lo = mid + 1
            else:
                hi = mid
        t0, s0 = recs[lo]
        t1, s1 = recs[-1]
        if t1 - t0 < srtt_ns or s1 <= s0:
            return None
        return (s1 - s0) / (t1 - t0)

    def peak_rate(self, now: int, srtt_ns: int):
        """Largest windowed rate observed over the trailing window, or
        None. At saturation the current rate sits at this peak; a rate
        well below it means the flow is ramping, crawling, or rebuilding
        after loss, where ACK spacing reflects how fast flights are
        serviced rather than a schedule worth policing."""
        if srtt_ns <= 0:
            srtt_ns = DEFAULT_SRTT_NS
        horizon = now - int(self.window_rtts * srtt_ns)
        peaks = self._peaks
        while peaks and peaks[0][0] <= horizon:
            peaks.popleft()
        if not peaks:
            return None
        return peaks[0][1]

    def split_rates(self, srtt_ns: int):
        """Arrival rates over the older and newer halves of the history,
        or None while either half spans less than one RTT.

        The full-span estimate is only meaningful once the arrival
        process has been roughly stationary across the window; during a
        ramp (flow start, post-timeout refill) the newer half runs well
        ahead of the older half and the full-span slope lags the live
        rate. Callers compare the two halves to decide whether the
        estimate has settled.
        """
        recs = self._records
        if len(recs) < 3:
            return None
        if srtt_ns <= 0:
            srtt_ns = DEFAULT_SRTT_NS
        t0, s0 = recs[0]
        t1, s1 = recs[-1]
        mid = (t0 + t1) // 2
        tail = self._tail
        while len(tail) > 2 and tail[1][0] <= mid:
            tail.popleft()
        tb, sb = tail[0]
        if tb > mid or tb <= t0 or tb >= t1:
            return None
        span_old = tb - t0
        span_new = t1 - tb
        if span_old < srtt_ns or span_new < srtt_ns:
            return None
        if sb <= s0 or s1 <= sb:
            return None
        return (sb - s0) / span_old, (s1 - sb) / span_new

    def reset(self):
        """Discard the arrival history and sequence state.

        The peak memory survives on purpose. A timeout abandons the
        schedule history, which is stale, but the fastest windowed rate
        recently sustained describes what the path recently served, and
        it anchors the forwarded-sample rate bound through the restart,
        which is exactly when retransmission bursts produce the most
        distorted measurements. It ages out of its window on its own.
        """
        self._records.clear()
        self._tail.clear()
        self.highest_seq = -1

    def __len__(self):
        return len(self._records)


class SendRateMeter:
    """Bytes sent over a trailing window, as a rate in bytes/ns."""

    def __init__(self):
        self._q: deque = deque()  # (t_ns, nbytes)
        self._bytes = 0

    def add(self, now: int, nbytes: int, window_ns: int):
        self._q.append((now, nbytes))
        self._bytes += nbytes
        self._prune(now, window_ns)

    def rate(self, now: int, window_ns: int) -> float:
        self._prune(now, window_ns)
        if window_ns <= 0:
            return 0.0
        return self._bytes / window_ns

    def _prune(self, now: int, window_ns: int):
        q = self._q
        floor = now - window_ns
        while q and q[0][0] <= floor:
            self._bytes -= q.popleft()[1]

    def reset(self):
        self._q.clear()
        self._bytes = 0


class ProbeRegistry:
    """Disjoint [lo, hi) byte ranges transmitted during probe episodes.

    Ranges grow while the probe condition holds at send time and close
    when it ends; an ACK whose highest acknowledged byte lands inside a
    range is a probe ACK. Ranges are pruned once fully acknowledged.
    """

    MAX_CLOSED = 64

    def __init__(self):
        self._closed: deque = deque()  # [lo, hi) in send order
        self._open = None

    def observe(self, seq: int, size: int, probing: bool):
        if probing:
            if self._open is not None and self._open[1] == seq:
                self._open = (self._open[0], seq + size)
            else:
                self._close()
                self._open = (seq, seq + size)
        else:
            self._close()

    def _close(self):
        if self._open is not None:
            self._closed.append(self._open)
            self._open = None
            while len(self._closed) > self.MAX_CLOSED:
                self._closed.popleft()

    def match(self, highest_seq: int) -> bool:
        """True if highest_seq falls in a registered range; ranges whose
        right edge is covered are retired."""
        hit = False
        closed = self._closed
        while closed and closed[0][1] <= highest_seq:
            if closed[0][0] < highest_seq:
                hit = True
            closed.popleft()
        if closed and closed[0][0] < highest_seq:
            hit = True
        if self._open is not None and self._open[0] < highest_seq:
            hit = True
        return hit

    def clear(self):
        self._closed.clear()
        self._open = None

    def __len__(self):
        return len(self._closed) + (1 if self._open is not None else 0)


class AckBuffer:
    """FIFO hold queue released by a grant timer.

    Each grant fires bytes/mu after the previous delivery to the
    algorithm (or at the entry's arrival time if that is later) and
    hands the head entry back through deliver_fn. ``flush`` releases
    everything at once in arrival order and invalidates any armed
    timer.
    """

    def __init__(self, sim, mu_fn, origin_fn, deliver_fn):
        self._sim = sim
        self._mu_fn = mu_fn          # () -> bytes/ns or None
        self._origin_fn = origin_fn  # () -> ns of last delivery to the CCA
        self._deliver = deliver_fn   # (arrival_ns, item, now, flushed)
        self._q: deque = deque()     # (arrival_ns, nbytes, item)
        self.queued_bytes = 0
        self.max_queued_bytes = 0
        self.empty_since_ns = -1
        self._armed = False
        self._gen = 0

    def __len__(self):
        return len(self._q)

    def enqueue(self, arrival_ns: int, nbytes: int, item):
        self._q.append((arrival_ns, nbytes, item))
        self.queued_bytes += nbytes
        self.empty_since_ns = -1
        if self.queued_bytes > self.max_queued_bytes:
            self.max_queued_bytes = self.queued_bytes
        self._arm()

    def _arm(self):
        if self._armed or not self._q:
            return
        arrival, nbytes, _ = self._q[0]
        at = arrival
        mu = self._mu_fn()
        if mu and mu > 0:
            origin = self._origin_fn()
            if origin >= 0:
                at = max(origin + int(round(nbytes / mu)), arrival)
        now = self._sim.now
        if at < now:
            at = now
        self._armed = True
        gen = self._gen
        self._sim.schedule(at, lambda: self._on_grant(gen))

    def _on_grant(self, gen: int):
        if gen != self._gen:
            return
        self._armed = False
        if not self._q:
            return
        now = self._sim.now
        arrival, nbytes, item = self._q.popleft()
        self.queued_bytes -= nbytes
        if not self._q:
            self.empty_since_ns = now
        self._deliver(arrival, item, now, False)
        self._arm()

    def flush(self, now: int):
        self._gen += 1
        self._armed = False
        while self._q:
            arrival, nbytes, item = self._q.popleft()
            self.queued_bytes -= nbytes
            self._deliver(arrival, item, now, True)
        self.empty_since_ns = now

    def reset(self):
        self._gen += 1
        self._armed = False
        self._q.clear()
        self.queued_bytes = 0
        self.empty_since_ns = -1


class PadShim:
    """Facade wiring the estimator, probe registry, and buffer to a flow.

    ``sink`` is called as sink(sample, release_time) for every sample,
    in arrival order, exactly once. A paced grant rewrites the sample's
    interval to the granted schedule before handing it over; flushed and
    pass-through deliveries keep their raw arrival timing. Every
    forwarded sample's rate is bounded by the service cap, because a
    sample above it carries a bunching artifact rather than a
    measurement (see _service_cap).
    """

    def __init__(self, sim, sink=None, config: PadConfig | None = None):
        self._sim = sim
        self._sink = sink
        self.cfg = config or PadConfig()
        self.mode = PASSIVE
        self.estimator = RateEstimator(self.cfg.window_rtts)
        self.probes = ProbeRegistry()
        self.meter = SendRateMeter()
        self.buffer = AckBuffer(
            sim, self._mu, lambda: self._prev_forward_ns, self._release)
        self._prev_forward_ns = -1
        self._srtt_ns = 0
        # counters
        self.forwarded = 0
        self.buffered = 0
        self.probe_passthrough = 0
        self.positive_entries = 0
        self.overflow_flushes = 0
        self.rto_flushes = 0
        self.probe_flushes = 0
        self.added_delay_total_ns = 0
        self.added_delay_max_ns = 0

    def bind_sink(self, sink):
        """Late sink binding for construction-order cycles (shim needs the
        sender's ingest method, the sender needs the shim)."""
        self._sink = sink

    # ------------------------------------------------------------------
    def _srtt(self) -> int:
        return self._srtt_ns if self._srtt_ns > 0 else DEFAULT_SRTT_NS

    def _mu(self):
        lam = self.estimator.rate(self._sim.now, self._srtt_ns)
        if lam is None or lam <= 0:
            return None
        return self.cfg.k * lam

    def _service_cap(self, now: int):
        """Bound on a forwarded sample's delivery rate, in bytes/ns.

        k times the fastest acknowledgment arrival rate the estimator
        has measured over its window: the path has never delivered
        faster than that over any sustained stretch, so a sample above
        the bound is a bunching artifact. Under compression the
        measured interval collapses onto the send span and the sample
        reports the sender's own pacing rate back to it; fed to a
        max-filtered bandwidth model that sets the next pacing rate,
        each such sample ratchets the model by its pacing gain, and the
        estimate climbs without the path serving a byte faster. The
        windowed slope is immune to that artifact because bunching
        moves acknowledgments within the window without changing how
        many bytes cross it. A genuinely faster path feeds the slope
        within a round trip or two, so the bound chases real capacity
        upward at k per window and never clips a discovery to below
        what the arrival process itself sustained.
        """
        lam = self.estimator.rate(now, self._srtt_ns)
        peak = self.estimator.peak_rate(now, self._srtt_ns)
        if lam is None and peak is None:
            return None
        base = max(lam or 0.0, peak or 0.0)
        return self.cfg.k * base

    def _forward(self, sample, now: int):
        cap = self._service_cap(now)
        if cap is not None and sample.interval_ns > 0:
            floor_ns = sample.delivered_bytes / cap
            # 1% of slack keeps honest samples that ride exactly at the
            # service rate untouched; bunching artifacts overshoot the
            # cap by the pacing gain, never by rounding
            if sample.interval_ns * 1.01 < floor_ns:
                sample.interval_ns = int(round(floor_ns))
        self.forwarded += 1
        self._prev_forward_ns = now
        self._sink(sample, now)

    def _release(self, arrival_ns: int, sample, now: int, flushed: bool):
        if flushed:
            # fail-open: deliver the untouched arrival-time measurement
            self._forward(sample, now)
            return
        hold = now - arrival_ns
        if hold > 0:
            if sample.rtt_ns > 0:
                # a sample with no usable round-trip measurement must
                # stay that way; adding the hold to the -1 sentinel
                # would fabricate a tiny, poisonous round-trip time
                sample.rtt_ns += hold
            self.added_delay_total_ns += hold
            if hold > self.added_delay_max_ns:
                self.added_delay_max_ns = hold
        mu = self._mu()
        if mu is not None:
            # the algorithm sees the granted schedule, never a faster
            # rate than the raw arrival measurement implied
            paced = int(round(sample.delivered_bytes / mu))
            if paced > sample.interval_ns:
                sample.interval_ns = paced
        self._forward(sample, now)

    # -- hooks called by the sender -------------------------------------
    def on_packet_sent(self, pkt, now: int, srtt_ns):
        if srtt_ns is not None and srtt_ns > 0:
            self._srtt_ns = srtt_ns
        window = self._srtt()
        self.meter.add(now, pkt.size, window)
        if pkt.is_retransmission:
            return
        if self.cfg.direct_probe_channel:
            probing = pkt.probe_marked
        else:
            mu = self._mu()
            probing = mu is not None and self.meter.rate(now, window) > mu
        self.probes.observe(pkt.seq, pkt.size, probing)

    def on_rto(self, now: int):
        self.rto_flushes += 1
        self.buffer.flush(now)
        self.buffer.reset()
        self.estimator.reset()
        self.meter.reset()
        self.probes.clear()
        self.mode = PASSIVE
        self._prev_forward_ns = -1

    def on_ack_from_socket(self, ack, sample, now: int, srtt_ns):
        if srtt_ns is not None and srtt_ns > 0:
            self._srtt_ns = srtt_ns
        highest = resolve_highest_seq(ack)
        acked_total = None
        if sample is not None and not sample.is_app_limited:
            # app-limited samples suspend the estimator: the constant
            # arrival-rate assumption needs a backlogged sender
            acked_total = sample.delivered_total
        self.estimator.record(now, highest, acked_total, self._srtt())
        if sample is None:
            return
        if self.probes.match(self.estimator.highest_seq):
            # probe outcome must reach the algorithm immediately; flush
            # anything queued ahead of it so delivery order still
            # matches arrival order. The mode is untouched: probing is
            # not evidence that the jitter episode ended
            self.probe_passthrough += 1
            if len(self.buffer):
                self.probe_flushes += 1
                self.buffer.flush(now)
            self._forward(sample, now)
            return
        lam = self.estimator.rate(now, self._srtt_ns)
        if lam is None or lam <= 0:
            if len(self.buffer):
                self.buffer.flush(now)
            self.mode = PASSIVE
            self._forward(sample, now)
            return
        if self.mode == POSITIVE:
            self._positive_ack(sample, now, lam)
        else:
            self._passive_ack(sample, now, lam)

    # ------------------------------------------------------------------
    def _trusted(self, now: int, lam: float) -> bool:
        """Whether lam is settled enough to anchor the earliness test.

        Three clauses. The history must span the full estimation
        window: a younger slope still averages over flow start or a
        post-timeout restart, phases whose arrival rate says nothing
        about the schedule arrivals should be held to. lam must sit
        within the guard margin of its own windowed peak: a flow below
        its recent peak is crawling or rebuilding after loss. And the
        newer half of the window must not run more than the guard
        margin ahead of the older half: that flow is still ramping, so
        the full-span slope lags the live arrival rate. In every one of
        those states the expected inter-ACK gap is inflated, honest
        arrivals look early and bunched against it, and grants paced at
        k*lam would run slower than the path serves bytes, growing the
        hold queue until the fail-open flush.
        """
        window_ns = self.cfg.window_rtts * self._srtt()
        if self.estimator.span_ns() < 0.9 * window_ns:
            return False
        peak = self.estimator.peak_rate(now, self._srtt_ns)
        if peak is None or lam < peak * (1.0 - self.cfg.guard_fraction):
            return False
        halves = self.estimator.split_rates(self._srtt_ns)
        if halves is None:
            return False
        old_rate, new_rate = halves
        return new_rate <= old_rate * (1.0 + self.cfg.guard_fraction)

    def _passive_ack(self, sample, now: int, lam: float):
        prev = self._prev_forward_ns
        if prev < 0 or not self._trusted(now, lam):
            self._forward(sample, now)
            return
        gap = sample.delivered_bytes / lam
        early = now < prev + gap * (1.0 - self.cfg.guard_fraction)
        # 1% under the budget, not exact equality: honest arrivals ride
        # at the grant schedule and must not trip on rounding. Only a
        # single-segment advance can be judged this way; a multi-segment
        # jump folds several service intervals into one acknowledgment
        # and its early arrival is aggregation, which the algorithm's
        # own send-span bound already discounts.
        bunched = sample.delivered_bytes <= SINGLE_SEGMENT_MAX and \
            (now - prev) * self.cfg.k * lam < sample.delivered_bytes * 0.99
        if early and bunched:
            # ahead of the lambda schedule beyond the guard, and faster
            # than the grant schedule itself: start holding to mu
            self.mode = POSITIVE
            self.positive_entries += 1
            self.buffered += 1
            self.buffer.enqueue(now, sample.delivered_bytes, sample)
        else:
            self._forward(sample, now)

    def _positive_ack(self, sample, now: int, lam: float):
        buf = self.buffer
        if not len(buf):
            # the episode ends only after a full quiet interval: the
            # queue stayed empty for idle_reset worth of smoothed RTT,
            # meaning arrivals have been on or behind the mu schedule
            # the whole time and there is nothing left to retime
            since = buf.empty_since_ns
            idle = int(self.cfg.idle_reset_rtts * self._srtt())
            if since >= 0 and now - since >= idle:
                self.mode = PASSIVE
                self._passive_ack(sample, now, lam)
                return
        limit = self.cfg.overflow_bdp_multiple * lam * self._srtt()
        if buf.queued_bytes + sample.delivered_bytes > limit:
            self.overflow_flushes += 1
            buf.flush(now)
            self.mode = PASSIVE
            self._forward(sample, now)
            return
        self.buffered += 1
        buf.enqueue(now, sample.delivered_bytes, sample)

    # ------------------------------------------------------------------
    def stats(self) -> dict:
        return {
            "mode": self.mode,
            "forwarded": self.forwarded,
            "buffered": self.buffered,
            "positive_entries": self.positive_entries,
            "probe_passthrough": self.probe_passthrough,
            "overflow_flushes": self.overflow_flushes,
            "rto_flushes": self.rto_flushes,
            "probe_flushes": self.probe_flushes,
            "max_queued_bytes": self.buffer.max_queued_bytes,
            "added_delay_total_ns": self.added_delay_total_ns,
            "added_delay_max_ns": self.added_delay_max_ns,
        }
