"""Numerical laboratory for the fractional KPZ equation on bounded domains."""

from __future__ import annotations

__version__ = "0.1.0"
