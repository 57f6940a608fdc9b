"""Paired clean/degraded training for a frozen-feature fake-image detector head."""

__version__ = "0.1.0"
