"""Calibrated photometric stereo with spatio-photometric heat-map regression."""

__version__ = "0.1.0"
