"""Characteristic initial data for the compressible Euler equations on a sound cone."""

__version__ = "0.1.0"
