"""Scattering-center physics, component priors and hybrid attention for SAR chips."""
__version__ = "0.1.0"
