"""Post-run measurement: goodput, RTT statistics, extra-latency
fraction, delivery-rate percentiles (raw and windowed-max), and
multi-flow fairness.

All functions are pure over completed flow logs; nothing here touches
simulator state, so summaries can be computed in parallel across runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .simcore import NS_PER_S
from .windowed import WindowedMax

WARMUP_NS = 5 * NS_PER_S
WINDOW_RTTS = 10  # windowed-max filter span, in mean round trips


def percentiles(samples, ps) -> list[float]:
    """Nearest-rank percentiles of a sample list (no interpolation)."""
    if len(samples) == 0:
        raise ValueError("percentiles of an empty sample list")
    data = sorted(samples)
    n = len(data)
    out = []
    for p in ps:
        rank = math.ceil(p / 100.0 * n)
        out.append(data[max(rank, 1) - 1])
    return out


def windowed_max_series(times, values, window) -> list[float]:
    """Per-sample output of a sliding windowed-max filter.

    Entry i is the maximum of all values within (times[i] - window,
    times[i]]. Times must be non-decreasing.
    """
    if len(times) != len(values):
        raise ValueError("times and values length mismatch")
    filt = WindowedMax(window)
    return [filt.update(t, v) for t, v in zip(times, values)]


def windowed_max_percentiles(times, values, window, ps) -> list[float]:
    return percentiles(windowed_max_series(times, values, window), ps)


@dataclass
class FairnessReport:
    ratio: float       # max/min goodput; inf when a flow is starved
    jain: float        # (sum x)^2 / (n * sum x^2)
    starved: bool

    def to_dict(self):
        return {"ratio": self.ratio, "jain": self.jain,
                "starved": self.starved}


def fairness(goodputs) -> FairnessReport:
    if len(goodputs) < 2:
        raise ValueError("fairness needs at least two flows")
    g = [float(x) for x in goodputs]
    lo, hi = min(g), max(g)
    starved = lo <= 0.0
    ratio = float("inf") if starved else hi / lo
    sq = sum(x * x for x in g)
    jain = (sum(g) ** 2) / (len(g) * sq) if sq > 0 else 0.0
    return FairnessReport(ratio=ratio, jain=jain, starved=starved)


@dataclass
class FlowSummary:
    flow_id: int
    cca_name: str
    pad_enabled: bool
    goodput_bps: float
    rtt_mean_ms: float
    rtt_median_ms: float
    rtt_p95_ms: float
    extra_latency_fraction: float
    rtt_samples: int
    loss_marks: int
    retransmits: int
    rtos: int
    drops: int
    p90_bps: float
    p99_bps: float
    wmax_p90_bps: float
    wmax_p99_bps: float
    pad_stats: dict | None = None


@dataclass
class RunSummary:
    duration_s: float
    warmup_s: float
    bottleneck_bps: float
    rtprop_mean_ms: float
    delay_stddev_ms: float
    seed: int
    flows: list
    aggregate_goodput_bps: float
    percentile_table: dict = field(default_factory=dict)
    fairness: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def _flow_summary(flow, warmup_ns, end_ns, rtprop_mean_ns, window_ns):
    """flow: a scenario FlowHandle with .log, .receiver, .warmup_bytes."""
    span_s = (end_ns - warmup_ns) / NS_PER_S
    good_bytes = flow.receiver.total_bytes - flow.warmup_bytes
    goodput = good_bytes * 8.0 / span_s if span_s > 0 else 0.0

    rtts = [r for (t, r) in flow.log.rtt_samples if t >= warmup_ns]
    if rtts:
        arr = np.asarray(rtts, dtype=np.float64) / 1e6  # ms
        mean_ms = float(arr.mean())
        med_ms = float(np.median(arr))
        p95_ms = float(percentiles(arr.tolist(), [95])[0])
    else:
        mean_ms = med_ms = p95_ms = 0.0
    base_ms = rtprop_mean_ns / 1e6
    extra = (mean_ms - base_ms) / base_ms if base_ms > 0 and rtts else 0.0

    rs = [(t, v) for (t, v) in flow.log.rate_samples if t >= warmup_ns]
    if rs:
        values = [v for _, v in rs]
        p90, p99 = percentiles(values, [90, 99])
        w90, w99 = windowed_max_percentiles(
            [t for t, _ in rs], values, window_ns, [90, 99])
    else:
        p90 = p99 = w90 = w99 = 0.0

    return FlowSummary(
        flow_id=flow.flow_id,
        cca_name=flow.cca_name,
        pad_enabled=flow.pad is not None,
        goodput_bps=goodput,
        rtt_mean_ms=mean_ms,
        rtt_median_ms=med_ms,
        rtt_p95_ms=p95_ms,
        extra_latency_fraction=extra,
        rtt_samples=len(rtts),
        loss_marks=flow.log.loss_marks,
        retransmits=flow.log.retransmits,
        rtos=flow.log.rtos,
        drops=flow.drops,
        p90_bps=p90,
        p99_bps=p99,
        wmax_p90_bps=w90,
        wmax_p99_bps=w99,
        pad_stats=flow.pad.stats() if flow.pad is not None else None,
    )


def build_summary(result, warmup_ns: int = WARMUP_NS) -> RunSummary:
    """Summarize a completed scenario result (see scenario.run_scenario)."""
    cfg = result.config
    end_ns = result.end_ns
    rtprop_ns = int(cfg.rtprop_ms * 1e6)
    window_ns = WINDOW_RTTS * rtprop_ns
    warmup_ns = min(warmup_ns, end_ns)

    flows = [
        _flow_summary(f, warmup_ns, end_ns, rtprop_ns, window_ns)
        for f in result.flows
    ]
    aggregate = sum(f.goodput_bps for f in flows)

    merged = sorted(
        ((t, v) for f in result.flows
         for (t, v) in f.log.rate_samples if t >= warmup_ns),
        key=lambda tv: tv[0])
    if merged:
        values = [v for _, v in merged]
        p90, p99 = percentiles(values, [90, 99])
        w90, w99 = windowed_max_percentiles(
            [t for t, _ in merged], values, window_ns, [90, 99])
        table = {"p90_bps": p90, "p99_bps": p99,
                 "wmax_p90_bps": w90, "wmax_p99_bps": w99}
    else:
        table = {"p90_bps": 0.0, "p99_bps": 0.0,
                 "wmax_p90_bps": 0.0, "wmax_p99_bps": 0.0}

    fair = None
    if len(flows) >= 2:
        fair = fairness([f.goodput_bps for f in flows]).to_dict()

    return RunSummary(
        duration_s=end_ns / NS_PER_S,
        warmup_s=warmup_ns / NS_PER_S,
        bottleneck_bps=cfg.bottleneck_bps,
        rtprop_mean_ms=cfg.rtprop_ms,
        delay_stddev_ms=cfg.delay_stddev_ms,
        seed=cfg.seed,
        flows=flows,
        aggregate_goodput_bps=aggregate,
        percentile_table=table,
        fairness=fair,
    )


def summary_to_json(summary: RunSummary) -> str:
    return json.dumps(summary.to_dict(), indent=2, sort_keys=True)


def write_sample_csv(result, path, warmup_ns: int = 0):
    """Full sample log: one row per measurement, sorted by time then flow."""
    rows = []
    for f in result.flows:
        for (t, v) in f.log.rate_samples:
            if t >= warmup_ns:
                rows.append((t / NS_PER_S, f.flow_id, "delivery_rate_bps", v))
        for (t, r) in f.log.rtt_samples:
            if t >= warmup_ns:
                rows.append((t / NS_PER_S, f.flow_id, "rtt_ms", r / 1e6))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "flow_id", "metric", "value"])
        for t, fid, metric, v in rows:
            w.writerow([f"{t:.9f}", fid, metric, f"{v:.6f}"])
