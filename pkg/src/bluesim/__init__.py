"""Deterministic discrete-event simulator for autonomous cyber-defense agents."""

__version__ = "0.1.0"
