"""Absolute 3D human pose lifting from 2D keypoints."""

__version__ = "0.1.0"
