"""Radar-LiDAR joint scene flow estimation at desk scale."""

__version__ = "0.1.0"
