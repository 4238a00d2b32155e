"""Capture adapter for walkerpose landmark streams."""

__version__ = "0.1.0"
