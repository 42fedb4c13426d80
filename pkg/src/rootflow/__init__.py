"""Meshless simulator for unsaturated soil water flow with plant root water uptake.

Internally everything runs in meters and hours; the config layer converts
cm/day style inputs at the I/O boundary.
"""

__version__ = "0.1.0"
