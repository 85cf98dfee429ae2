"""Congestion control algorithms.

Each algorithm consumes per-delivery rate samples (see
:class:`padsim.netmodel.RateSample`) plus loss and timeout notifications,
and exposes the two actuation knobs the sender honours: a congestion
window in bytes and a pacing rate in bits per second.

Algorithm name strings accept an optional ``pad+`` prefix, which enables
the ACK-rescheduling shim in front of the algorithm (handled at flow
construction, not here).
"""

from __future__ import annotations

from ..netmodel import MSS

MIN_CWND_BYTES = 4 * MSS


class CongestionControl:
    """Base interface. Subclasses override the callbacks they care about."""

    name = "base"

    def __init__(self, rng=None):
        self._rng = rng

    # -- event callbacks -------------------------------------------------
    def on_ack(self, sample, now, inflight_bytes):
        """One delivery event: ``sample`` is a RateSample, ``inflight_bytes``
        the pipe estimate after scoreboard update."""

    def on_loss_detected(self, lost_range, recovery_point, inflight_bytes, now):
        """First loss mark of a recovery episode. ``lost_range`` is the
        (lo, hi) byte span of the first segment marked lost and
        ``recovery_point`` the sequence whose cumulative ACK ends recovery."""

    def on_rto(self, now):
        """Retransmission timeout fired."""

    def on_packet_sent(self, pkt, now, inflight_bytes):
        """A segment (new or retransmitted) entered the network."""

    # -- actuation queries ------------------------------------------------
    def cwnd(self) -> int:
        """Congestion window in bytes."""
        raise NotImplementedError

    def pacing_rate(self) -> float:
        """Pacing rate in bits per second."""
        raise NotImplementedError

    def pacing_gain(self) -> float:
        """Current pacing gain; > 1.0 marks sent packets as bandwidth probes."""
        return 1.0


from .bbr import Bbr  # noqa: E402
from .cubic import Cubic  # noqa: E402
from .vegas import Vegas  # noqa: E402
from .copa import Copa  # noqa: E402

_REGISTRY = {
    "bbr": Bbr,
    "cubic": Cubic,
    "vegas": Vegas,
    "copa": Copa,
}


def parse_cca_name(name: str):
    """Split an algorithm name into (base_name, pad_wrapped)."""
    pad = name.startswith("pad+")
    base = name[4:] if pad else name
    if base not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown congestion control {name!r} (known: {known})")
    return base, pad


def make_cca(base_name: str, rng=None) -> CongestionControl:
    return _REGISTRY[base_name](rng=rng)


__all__ = [
    "CongestionControl",
    "Bbr",
    "Cubic",
    "Vegas",
    "Copa",
    "MIN_CWND_BYTES",
    "parse_cca_name",
    "make_cca",
]
