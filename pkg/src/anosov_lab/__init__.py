"""Computational checks for discretized Anosov flows on mapping tori of T^2."""

from __future__ import annotations

__version__ = "0.1.0"
