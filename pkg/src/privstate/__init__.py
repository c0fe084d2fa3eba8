"""Desk-scale laboratory for key extraction from a noisy four-qubit private state."""

__version__ = "0.1.0"
