"""Simulator and verification lab for 3-majority dynamics with Byzantine adversaries."""

__version__ = "0.1.0"
