"""padsim: discrete-event study of ACK-timing robustness for
measurement-based congestion control, including the PAD ACK-rescheduling
shim (rate estimator + ACK buffer) between the socket base and the CCA."""

from padsim.simcore import Simulator

__version__ = "0.1.0"

__all__ = ["Simulator", "__version__"]
