"""Simulation and analysis of unnormalized self-attention dynamics with
auxiliary variables on the unit sphere."""

__version__ = "0.1.0"
