"""Streaming reconstruction of spatiotemporal fields from sparse observations."""

__version__ = "0.1.0"
