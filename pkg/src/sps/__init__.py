"""Spectrogram processing strategies for acoustic scene classification.

Core package: audio decoding, four time-frequency representations, a
from-scratch CNN kernel, decision-level fusion strategies, and metrics.
`sps.service` wraps it all in a FastAPI app; `sps.cli` is a thin client.
"""

__version__ = "0.1.0"
