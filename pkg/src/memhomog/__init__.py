"""Homogenised lateral diffusion on periodic and fluctuating quasi-planar surfaces."""
__version__ = "0.1.0"
