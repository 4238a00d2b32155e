"""Posture classification for smart-walker pose-landmark streams."""

__version__ = "0.1.0"
