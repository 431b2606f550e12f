"""Streaming insider-threat detection with evidential clustering."""

__version__ = "0.1.0"
