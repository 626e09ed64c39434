"""Liver segmentation from a CNN likelihood map refined by a 3D graph cut."""

__version__ = "0.1.0"
