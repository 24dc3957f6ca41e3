"""Lineage tracing with GAN-based optimal transport and supervised pairing."""

__version__ = "0.1.0"
