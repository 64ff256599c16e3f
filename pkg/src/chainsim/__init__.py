"""Deterministic desk-scale blockchain node and network simulator."""

__version__ = "0.1.0"
