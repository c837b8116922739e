"""Noise-aware decoding of the XZZX surface code with ACES noise estimates."""

__version__ = "0.1.0"
