"""Spectrum-sharing system simulator with a radio service map subsystem."""

__version__ = "0.1.0"
