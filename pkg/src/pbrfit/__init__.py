"""Differentiable Monte Carlo PBR rendering and inverse material/lighting fitting."""

__version__ = "0.1.0"
