"""Cycle-independent gait and walking-direction recognition from simulated Wi-Fi CSI."""

__version__ = "0.1.0"
