"""Adaptive rotated convolution: rotation, routing, the ARC layer and its analysis suite."""

__version__ = "1.0.0"
