"""Deterministic packet-level simulator for INT-driven congestion control over LEO paths."""

__version__ = "0.1.0"
