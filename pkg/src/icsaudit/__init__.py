"""Passive exposure assessment for internet-facing industrial controllers."""

__version__ = "0.1.0"
