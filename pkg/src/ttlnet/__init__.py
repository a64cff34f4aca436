"""Slotted network simulator with per-packet lifetimes and learned control policies."""

__version__ = "0.1.0"
