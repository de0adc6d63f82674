"""Signal shaping for beamspace-modulated mmWave hybrid MIMO links."""

__version__ = "0.1.0"

from . import channel, errors, jsonio, linkeval, precoding, qcqp, shaping
