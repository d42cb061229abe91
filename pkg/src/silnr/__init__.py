"""Multi-cell MU-MIMO downlink precoding with local, noisy CSIT."""

__version__ = "0.1.0"
