"""Globally convergent reconstruction of the dielectric constant of buried
targets from backscattered time-domain data."""

__version__ = "0.1.0"
