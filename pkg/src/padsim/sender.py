"""Sender socket base: sequencing, pacing, SACK scoreboard, RTT estimation,
fast retransmit / RTO, delivered accounting, and delivery-rate sampling.

The socket base handles transport mechanics at ACK arrival time. What it
feeds the congestion controller — the per-delivery RateSample — can be
re-timed by the PAD shim; everything else (loss marks, RTO) reaches the
CCA immediately.
"""

from __future__ import annotations

from collections import deque

from padsim.netmodel import MSS, AckRecord, BottleneckLink, Packet, RateSample
from padsim.simcore import NS_PER_MS, Simulator

MIN_RTO_NS = 200 * NS_PER_MS
INITIAL_RTO_NS = 1000 * NS_PER_MS
INITIAL_CWND = 10 * MSS
DUPACK_THRESHOLD = 3
REORDER_BYTES = 3 * MSS  # SACKed bytes this far above a hole mark it lost


class SentRecord:
    __slots__ = (
        "seq", "size", "last_send_time", "delivered_at_send", "app_limited",
        "in_flight", "sacked", "lost", "delivered", "retx_count",
        "in_retx_queue",
    )

    def __init__(self, seq: int, size: int):
        self.seq = seq
        self.size = size
        self.last_send_time = -1
        self.delivered_at_send = 0
        self.app_limited = False
        self.in_flight = False
        self.sacked = False
        self.lost = False
        self.delivered = False
        self.retx_count = 0
        self.in_retx_queue = False


class FlowLog:
    """Per-flow measurement log consumed by the metrics layer."""

    def __init__(self):
        self.rtt_samples: list[tuple[int, int]] = []      # (arrival ns, rtt ns)
        self.rate_samples: list[tuple[int, float]] = []   # (cca ingress ns, bps)
        self.retransmits = 0
        self.rtos = 0
        self.loss_marks = 0


class Sender:
    """One flow's sending endpoint, always backlogged unless app_limited."""

    def __init__(
        self,
        sim: Simulator,
        flow_id: int,
        link: BottleneckLink,
        cca,
        pad=None,
        log: FlowLog | None = None,
    ):
        self.sim = sim
        self.flow_id = flow_id
        self.link = link
        self.cca = cca
        self.pad = pad
        self.log = log if log is not None else FlowLog()

        self.started = False
        self.app_limited = False

        # sequencing / scoreboard
        self.next_seq = 0
        self.snd_una = 0
        self.records: dict[int, SentRecord] = {}
        self.order: deque[int] = deque()          # unacked original seqs, ascending
        self._loss_scan: deque[int] = deque()     # order entries not yet settled
        self.retx_queue: deque[int] = deque()
        self.highest_sacked = 0                   # right edge of highest sacked seg
        self._sack_done: dict[int, int] = {}      # block lo -> hi already applied
        self.dupacks = 0
        self.pipe_bytes = 0

        # recovery / RTO
        self.in_recovery = False
        self.recovery_point = 0
        self.srtt_ns: int | None = None
        self.rttvar_ns = 0
        self.rto_interval_ns = INITIAL_RTO_NS
        self.rto_backoff = 1
        self._rto_gen = 0
        self._rto_deadline = -1

        # delivery accounting / rate sampling
        self.delivered_total = 0
        self._last_delivery_t: int | None = None

        # pacing
        self.cwnd_bytes = INITIAL_CWND
        self.pacing_rate_bps = 1.0
        self._next_send_time = 0
        self._wake_gen = 0

        self._refresh_cca()

    # ------------------------------------------------------------------ sending

    def start(self) -> None:
        self.started = True
        self._next_send_time = self.sim.now
        self._pump()

    def _refresh_cca(self) -> None:
        self.cwnd_bytes = max(self.cca.cwnd(), 4 * MSS)
        rate = self.cca.pacing_rate()
        assert rate > 0, "pacing rate must stay positive"
        self.pacing_rate_bps = rate

    def _pump(self) -> None:
        if not self.started:
            return
        now = self.sim.now
        while True:
            if self.pipe_bytes + MSS > self.cwnd_bytes:
                return
            if self._next_send_time > now:
                self._arm_wake(self._next_send_time)
                return
            seq = self._next_retx_seq()
            if seq is not None:
                self._send_segment(seq, is_retx=True)
            elif not self.app_limited:
                seq = self.next_seq
                self.next_seq = seq + MSS
                self.records[seq] = SentRecord(seq, MSS)
                self.order.append(seq)
                self._loss_scan.append(seq)
                self._send_segment(seq, is_retx=False)
            else:
                return

    def _next_retx_seq(self) -> int | None:
        q = self.retx_queue
        while q:
            seq = q.popleft()
            rec = self.records.get(seq)
            if rec is None or rec.sacked or not rec.lost:
                continue
            rec.in_retx_queue = False
            return seq
        return None

    def _send_segment(self, seq: int, is_retx: bool) -> None:
        now = self.sim.now
        rec = self.records[seq]
        rec.last_send_time = now
        rec.delivered_at_send = self.delivered_total
        rec.app_limited = self.app_limited
        if is_retx:
            rec.retx_count += 1
            rec.lost = False
            self.log.retransmits += 1
        if not rec.in_flight:
            rec.in_flight = True
            self.pipe_bytes += rec.size
        pkt = Packet(
            flow_id=self.flow_id,
            seq=seq,
            size=rec.size,
            send_time=now,
            is_retransmission=is_retx,
            probe_marked=self.cca.pacing_gain() > 1.0,
        )
        gap = int(round(rec.size * 8e9 / self.pacing_rate_bps))
        base = self._next_send_time if self._next_send_time > now else now
        self._next_send_time = base + gap
        self.link.send(pkt)
        self.cca.on_packet_sent(pkt, now, self.pipe_bytes)
        if self.pad is not None:
            self.pad.on_packet_sent(pkt, now, self.srtt_ns)
        if self._rto_deadline < 0:
            self._arm_rto()

    def _arm_wake(self, at: int) -> None:
        self._wake_gen += 1
        gen = self._wake_gen
        self.sim.schedule(at, lambda: self._on_wake(gen))

    def _on_wake(self, gen: int) -> None:
        if gen == self._wake_gen:
            self._pump()

    # ------------------------------------------------------------------ ACK path

    def on_ack(self, ack: AckRecord) -> None:
        now = self.sim.now
        ack.arrival_time = now
        cum_advanced = ack.cum_ack > self.snd_una
        newly = self._apply_scoreboard(ack)
        self._update_rtt(newly, now)
        self._detect_losses()
        if self.in_recovery and self.snd_una >= self.recovery_point:
            self.in_recovery = False
        sample = self._build_sample(ack, newly, now) if newly else None
        if self.pad is not None:
            # the shim sees every ACK so its arrival-rate history stays
            # complete even when nothing new was acknowledged
            self.pad.on_ack_from_socket(ack, sample, now, self.srtt_ns)
        elif sample is not None:
            self.cca_ingest(sample, now)
        if self.order or self.retx_queue:
            # RFC 6298: restart the timer only when the ACK acknowledges new
            # data cumulatively; SACK-only progress does not defer the RTO.
            if cum_advanced:
                self._arm_rto()
        else:
            self._rto_deadline = -1
            self._rto_gen += 1
        self._pump()

    def _apply_scoreboard(self, ack: AckRecord) -> list[SentRecord]:
        newly: list[SentRecord] = []
        cum = ack.cum_ack
        progressed = False
        if cum > self.snd_una:
            progressed = True
            self.snd_una = cum
            order = self.order
            records = self.records
            while order and order[0] < cum:
                seq = order.popleft()
                rec = records.pop(seq, None)
                if rec is None:
                    continue
                if rec.in_flight:
                    rec.in_flight = False
                    self.pipe_bytes -= rec.size
                if not rec.delivered:
                    rec.delivered = True
                    self.delivered_total += rec.size
                    newly.append(rec)
            for lo in [lo for lo in self._sack_done if lo < cum]:
                del self._sack_done[lo]
        for lo, hi in ack.sack_blocks:
            start = self._sack_done.get(lo, lo)
            if start < hi:
                for seq in range(start, hi, MSS):
                    rec = self.records.get(seq)
                    if rec is None or rec.sacked:
                        continue
                    rec.sacked = True
                    if rec.in_flight:
                        rec.in_flight = False
                        self.pipe_bytes -= rec.size
                    if not rec.delivered:
                        rec.delivered = True
                        self.delivered_total += rec.size
                        newly.append(rec)
                    progressed = True
                self._sack_done[lo] = hi
            if hi > self.highest_sacked:
                self.highest_sacked = hi
        if progressed:
            self.dupacks = 0
        elif self.order or self.retx_queue:
            self.dupacks += 1
        return newly

    def _update_rtt(self, newly: list[SentRecord], now: int) -> None:
        best = None
        for rec in newly:
            if rec.retx_count == 0 and (best is None or rec.seq > best.seq):
                best = rec
        if best is None:
            return
        m = now - best.last_send_time
        self.log.rtt_samples.append((now, m))
        if self.srtt_ns is None:
            self.srtt_ns = m
            self.rttvar_ns = m // 2
        else:
            self.rttvar_ns = (3 * self.rttvar_ns + abs(self.srtt_ns - m)) // 4
            self.srtt_ns = (7 * self.srtt_ns + m) // 8
        self.rto_backoff = 1
        self.rto_interval_ns = max(MIN_RTO_NS, self.srtt_ns + 4 * self.rttvar_ns)

    def _detect_losses(self) -> None:
        newly_lost: list[SentRecord] = []
        records = self.records
        limit = self.highest_sacked - REORDER_BYTES
        scan = self._loss_scan
        # drop the settled prefix: acknowledged, SACKed, already marked,
        # or retransmitted segments never need another look (a timeout
        # rebuilds the queue), so the scan stays short even when the
        # scoreboard is large
        while scan:
            rec = records.get(scan[0])
            if rec is not None and not rec.sacked and not rec.lost \
                    and rec.retx_count == 0:
                break
            scan.popleft()
        for seq in scan:
            if seq >= limit:
                break
            rec = records.get(seq)
            if rec is None or rec.sacked or rec.lost:
                continue
            if rec.retx_count > 0:
                # Fast recovery retransmits a segment at most once; a lost
                # retransmission is only recovered by the RTO.
                continue
            rec.lost = True
            if rec.in_flight:
                rec.in_flight = False
                self.pipe_bytes -= rec.size
            newly_lost.append(rec)
        if self.dupacks >= DUPACK_THRESHOLD:
            rec = records.get(self.snd_una)
            if (rec is not None and not rec.sacked and not rec.lost
                    and rec.retx_count == 0):
                rec.lost = True
                if rec.in_flight:
                    rec.in_flight = False
                    self.pipe_bytes -= rec.size
                newly_lost.append(rec)
        if not newly_lost:
            return
        self.log.loss_marks += len(newly_lost)
        for rec in newly_lost:
            if not rec.in_retx_queue:
                rec.in_retx_queue = True
                self.retx_queue.append(rec.seq)
        if not self.in_recovery:
            self.in_recovery = True
            self.recovery_point = self.next_seq
            lo = min(rec.seq for rec in newly_lost)
            hi = max(rec.seq + rec.size for rec in newly_lost)
            self.cca.on_loss_detected(
                (lo, hi), self.recovery_point, self.pipe_bytes, self.sim.now
            )
            self._refresh_cca()

    def _build_sample(
        self, ack: AckRecord, newly: list[SentRecord], now: int
    ) -> RateSample | None:
        newest = newly[0]
        best_fresh = None  # newest never-retransmitted record: valid for RTT
        lo_send = hi_send = newest.last_send_time
        bytes_delivered = 0
        for rec in newly:
            bytes_delivered += rec.size
            t = rec.last_send_time
            if t < lo_send:
                lo_send = t
            elif t > hi_send:
                hi_send = t
            if rec.seq > newest.seq:
                newest = rec
            if rec.retx_count == 0 and (
                    best_fresh is None or rec.seq > best_fresh.seq):
                best_fresh = rec
        prev = self._last_delivery_t
        self._last_delivery_t = now
        if prev is None:
            return None
        span = hi_send - lo_send
        interval = max(now - prev, span, 1)
        # Karn: an ACK covering only retransmitted data carries no usable RTT
        rtt = now - best_fresh.last_send_time if best_fresh is not None else -1
        return RateSample(
            delivered_bytes=bytes_delivered,
            interval_ns=interval,
            rtt_ns=rtt,
            is_app_limited=newest.app_limited,
            ack=ack,
            send_span_ns=span,
            delivered_total=self.delivered_total,
            delivered_at_send=newest.delivered_at_send,
        )

    def cca_ingest(self, sample: RateSample, t: int) -> None:
        """Deliver one rate sample to the CCA, possibly re-timed by PAD.

        The sample's measurement fields are settled by the caller: raw
        arrival measurements on the pass-through path, or a grant-paced
        interval when PAD released it from the hold queue.
        """
        self.log.rate_samples.append((t, sample.delivery_rate_bps))
        self.cca.on_ack(sample, t, self.pipe_bytes)
        self._refresh_cca()
        self._pump()

    # ------------------------------------------------------------------ RTO

    def _arm_rto(self) -> None:
        self._rto_gen += 1
        gen = self._rto_gen
        deadline = self.sim.now + self.rto_interval_ns * self.rto_backoff
        self._rto_deadline = deadline
        self.sim.schedule(deadline, lambda: self._on_rto_timer(gen))

    def _on_rto_timer(self, gen: int) -> None:
        if gen != self._rto_gen or self._rto_deadline < 0:
            return
        if not self.order and not self.retx_queue:
            self._rto_deadline = -1
            return
        self.log.rtos += 1
        now = self.sim.now
        # RFC 2018: prior SACK information is discarded after a timeout, so
        # every outstanding segment is presumed lost and queued again.
        self.retx_queue.clear()
        for seq in self.order:
            rec = self.records.get(seq)
            if rec is None:
                continue
            rec.sacked = False
            if rec.in_flight:
                rec.in_flight = False
                self.pipe_bytes -= rec.size
            rec.lost = True
            rec.in_retx_queue = True
            self.retx_queue.append(seq)
        self._sack_done.clear()
        self.highest_sacked = self.snd_una
        self.dupacks = 0
        self.in_recovery = True
        self.recovery_point = self.next_seq
        # SACK flags were cleared above, so previously settled segments
        # are eligible for marking again
        self._loss_scan = deque(self.order)
        if self.pad is not None:
            self.pad.on_rto(now)
        self.cca.on_rto(now)
        self._refresh_cca()
        self.rto_backoff = min(self.rto_backoff * 2, 64)
        self._next_send_time = now
        self._arm_rto()
        self._pump()
