"""Dual-phase teleoperation intent inference: navigation belief maps and object-level manipulation belief."""

__version__ = "0.1.0"
