"""Subtitle quality toolkit: detection, correction, scoring, and review."""

__version__ = "0.1.0"
