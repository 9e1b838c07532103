"""Geo-coordinate GRID encodings as a domain-adaptation signal for segmentation."""

__version__ = "0.1.0"
