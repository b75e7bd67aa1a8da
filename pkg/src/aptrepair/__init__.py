"""Repair-strategy engine for APT defense on time-varying networks."""

__version__ = "0.1.0"
