"""Preference post-training for camera-trajectory generators on an analytic stage."""

from __future__ import annotations

__version__ = "0.1.0"
