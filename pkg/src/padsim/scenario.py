"""Scenario configuration, single-run execution, and parameter sweeps.

A scenario is a dumbbell: N senders share one drop-tail bottleneck whose
downstream propagation delay fluctuates around half the configured round
trip; the return path is clean constant delay. Flows start staggered
(default 0.1 s apart), run for duration_s, and the logs are summarized
after a warm-up exclusion.

Config files are JSON; see docs/scenario.schema.json for the canonical
field names. Identical config plus seed reproduces byte-identical
output.
"""

from __future__ import annotations

import csv
import multiprocessing
import os
from dataclasses import dataclass, field, replace

from . import metrics
from .cca import make_cca, parse_cca_name
from .netmodel import BottleneckLink, DelayProcess, Receiver
from .pad import PadConfig, PadShim
from .sender import FlowLog, Sender
from .simcore import NS_PER_S, Simulator, seconds_to_ns


class ConfigError(ValueError):
    """Invalid scenario configuration; message names the offending field."""


@dataclass
class FlowSpec:
    cca_name: str = "bbr"
    pad_enabled: bool | None = None    # None: derived from a "pad+" prefix
    start_offset_s: float | None = None  # None: 0.1 * flow index


@dataclass
class ScenarioConfig:
    bottleneck_bps: float = 10e6
    rtprop_ms: float = 160.0
    queue_packets: int = 100
    delay_stddev_ms: float = 0.0
    delay_update_ms: float = 100.0
    reverse_jitter: bool = False
    duration_s: float = 60.0
    seed: int = 0
    flows: list = field(default_factory=lambda: [FlowSpec()])
    pad_k: float = 1.025
    pad_window_rtts: int = 16
    pad_guard_fraction: float = 0.25
    pad_idle_reset_rtts: float = 1.0
    pad_direct_probe_channel: bool = True


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: ScenarioConfig) -> None:
    _require(cfg.bottleneck_bps > 0, "bottleneck_bps: must be positive")
    _require(cfg.rtprop_ms > 0, "rtprop_ms: must be positive")
    _require(int(cfg.queue_packets) == cfg.queue_packets
             and cfg.queue_packets > 0,
             "queue_packets: must be a positive integer")
    _require(cfg.delay_stddev_ms >= 0, "delay_stddev_ms: must be >= 0")
    _require(cfg.delay_update_ms > 0, "delay_update_ms: must be positive")
    _require(cfg.duration_s > 0, "duration_s: must be positive")
    _require(int(cfg.seed) == cfg.seed and cfg.seed >= 0,
             "seed: must be a non-negative integer")
    _require(len(cfg.flows) > 0, "flows: must list at least one flow")
    _require(cfg.pad_k > 1, "pad.k: must be > 1")
    _require(int(cfg.pad_window_rtts) == cfg.pad_window_rtts
             and cfg.pad_window_rtts >= 1,
             "pad.w: must be an integer >= 1")
    _require(0 < cfg.pad_guard_fraction < 1,
             "pad.guard_fraction: must lie in (0, 1)")
    _require(cfg.pad_idle_reset_rtts > 0,
             "pad.idle_reset: must be positive")
    for i, fs in enumerate(cfg.flows):
        try:
            parse_cca_name(fs.cca_name)
        except ValueError as exc:
            raise ConfigError(f"flows[{i}].cca_name: {exc}") from exc
        if fs.start_offset_s is not None:
            _require(fs.start_offset_s >= 0,
                     f"flows[{i}].start_offset_s: must be >= 0")


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Build and validate a config from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    known = {
        "bottleneck_bps", "rtprop_ms", "queue_packets", "delay_stddev_ms",
        "delay_update_ms", "reverse_jitter", "duration_s", "seed", "flows",
        "pad",
    }
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    kwargs = {k: doc[k] for k in known - {"flows", "pad"} if k in doc}
    flows_doc = doc.get("flows", [{"cca_name": "bbr"}])
    if not isinstance(flows_doc, list):
        raise ConfigError("flows: must be a list")
    flows = []
    for i, fd in enumerate(flows_doc):
        if not isinstance(fd, dict):
            raise ConfigError(f"flows[{i}]: must be an object")
        for key in fd:
            if key not in {"cca_name", "pad_enabled", "start_offset_s"}:
                raise ConfigError(f"flows[{i}].{key}: unknown field")
        flows.append(FlowSpec(
            cca_name=fd.get("cca_name", "bbr"),
            pad_enabled=fd.get("pad_enabled"),
            start_offset_s=fd.get("start_offset_s"),
        ))
    pad_doc = doc.get("pad", {})
    if not isinstance(pad_doc, dict):
        raise ConfigError("pad: must be an object")
    for key in pad_doc:
        if key not in {"k", "w", "guard_fraction", "idle_reset",
                       "direct_probe_channel"}:
            raise ConfigError(f"pad.{key}: unknown field")
    cfg = ScenarioConfig(
        flows=flows,
        pad_k=pad_doc.get("k", 1.025),
        pad_window_rtts=pad_doc.get("w", 16),
        pad_guard_fraction=pad_doc.get("guard_fraction", 0.25),
        pad_idle_reset_rtts=pad_doc.get("idle_reset", 1.0),
        pad_direct_probe_channel=pad_doc.get("direct_probe_channel", True),
        **kwargs,
    )
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------- run


class FlowHandle:
    """Everything the metrics layer needs about one completed flow."""

    def __init__(self, flow_id, cca_name, sender, receiver, pad, link):
        self.flow_id = flow_id
        self.cca_name = cca_name
        self.sender = sender
        self.receiver = receiver
        self.pad = pad
        self.log = sender.log
        self._link = link
        self.warmup_bytes = 0

    @property
    def drops(self) -> int:
        return self._link.drops.get(self.flow_id, 0)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    end_ns: int
    flows: list
    sim: Simulator


def build_scenario(cfg: ScenarioConfig):
    """Wire up simulator, link, and flows without running."""
    validate_config(cfg)
    sim = Simulator(seed=cfg.seed)
    one_way_ns = seconds_to_ns(cfg.rtprop_ms / 2000.0)
    forward = DelayProcess(
        mean_ns=one_way_ns,
        stddev_ns=seconds_to_ns(cfg.delay_stddev_ms / 1000.0),
        update_interval_ns=seconds_to_ns(cfg.delay_update_ms / 1000.0),
        rng=sim.rng("delay.forward"),
    )
    if cfg.reverse_jitter:
        reverse = DelayProcess(
            mean_ns=one_way_ns,
            stddev_ns=seconds_to_ns(cfg.delay_stddev_ms / 1000.0),
            update_interval_ns=seconds_to_ns(cfg.delay_update_ms / 1000.0),
            rng=sim.rng("delay.reverse"),
        )
        reverse_delay = reverse.delay_at
    else:
        reverse_delay = lambda t: one_way_ns  # noqa: E731
    receivers: dict[int, Receiver] = {}
    senders: dict[int, Sender] = {}

    def deliver(pkt, arrival):
        ack = receivers[pkt.flow_id].on_data(pkt, arrival)
        sim.schedule(arrival + reverse_delay(arrival),
                     lambda a=ack: senders[a.flow_id].on_ack(a))

    link = BottleneckLink(
        sim,
        rate_bps=cfg.bottleneck_bps,
        capacity_pkts=cfg.queue_packets,
        delay_fn=forward.delay_at,
        deliver=deliver,
    )

    handles = []
    for i, fs in enumerate(cfg.flows):
        base, prefixed = parse_cca_name(fs.cca_name)
        pad_on = prefixed if fs.pad_enabled is None else fs.pad_enabled
        cca = make_cca(base, rng=sim.rng(f"cca.{i}"))
        receivers[i] = Receiver(i)
        pad = None
        if pad_on:
            pad = PadShim(sim, config=PadConfig(
                k=cfg.pad_k,
                window_rtts=cfg.pad_window_rtts,
                guard_fraction=cfg.pad_guard_fraction,
                idle_reset_rtts=cfg.pad_idle_reset_rtts,
                direct_probe_channel=cfg.pad_direct_probe_channel,
            ))
        sender = Sender(sim, i, link, cca, pad=pad, log=FlowLog())
        if pad is not None:
            pad.bind_sink(sender.cca_ingest)
        senders[i] = sender
        offset = fs.start_offset_s if fs.start_offset_s is not None \
            else 0.1 * i
        sim.schedule(seconds_to_ns(offset), sender.start)
        handles.append(FlowHandle(i, fs.cca_name, sender, receivers[i],
                                  pad, link))
    return sim, link, handles


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    sim, link, handles = build_scenario(cfg)
    end_ns = seconds_to_ns(cfg.duration_s)
    warmup_ns = min(metrics.WARMUP_NS, end_ns)

    def snapshot():
        for h in handles:
            h.warmup_bytes = h.receiver.total_bytes

    sim.schedule(warmup_ns, snapshot)
    sim.run_until(end_ns)
    return ScenarioResult(config=cfg, end_ns=end_ns, flows=handles, sim=sim)


def summarize(cfg: ScenarioConfig) -> metrics.RunSummary:
    return metrics.build_summary(run_scenario(cfg))


# ---------------------------------------------------------------------- sweep

SWEEP_COLUMNS = [
    "cca", "stddev", "seed", "goodput", "mean_rtt",
    "extra_latency_fraction", "p90", "p99", "wmax_p90", "wmax_p99",
]


def _sweep_cell(args):
    base, cca_name, stddev, seed = args
    cfg = replace(
        base,
        delay_stddev_ms=float(stddev),
        seed=int(seed),
        flows=[FlowSpec(cca_name=cca_name)],
    )
    try:
        summary = metrics.build_summary(run_scenario(cfg))
    except Exception as exc:  # recorded, sweep continues
        return (cca_name, stddev, seed, None, repr(exc))
    f = summary.flows[0]
    row = [
        cca_name, f"{float(stddev):g}", str(int(seed)),
        f"{f.goodput_bps:.3f}", f"{f.rtt_mean_ms:.6f}",
        f"{f.extra_latency_fraction:.6f}",
        f"{f.p90_bps:.3f}", f"{f.p99_bps:.3f}",
        f"{f.wmax_p90_bps:.3f}", f"{f.wmax_p99_bps:.3f}",
    ]
    return (cca_name, stddev, seed, row, None)


def run_sweep(base: ScenarioConfig, stddevs, ccas, seeds,
              out_dir: str, workers: int = 1):
    """One run per (cca, stddev, seed); tidy CSV plus an error log.

    Returns (row_count, failure_count). Output rows are sorted by
    (cca, stddev, seed) regardless of execution order, so parallel and
    serial sweeps write identical files.
    """
    for name in ccas:
        parse_cca_name(name)  # fail fast on typos before any run
    cells = [(base, c, sd, s) for c in ccas for sd in stddevs for s in seeds]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_sweep_cell, cells)
    else:
        results = [_sweep_cell(c) for c in cells]

    results.sort(key=lambda r: (str(r[0]), float(r[1]), int(r[2])))
    os.makedirs(out_dir, exist_ok=True)
    rows = [r[3] for r in results if r[3] is not None]
    failures = [(r[0], r[1], r[2], r[4]) for r in results if r[4] is not None]

    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    if failures:
        with open(os.path.join(out_dir, "errors.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cca", "stddev", "seed", "error"])
            for cca_name, sd, seed, err in failures:
                w.writerow([cca_name, f"{float(sd):g}", str(int(seed)), err])
    return len(rows), len(failures)
