"""Simulation and numerical verification toolkit for the N-system in the Halfin-Whitt regime."""

__version__ = "0.1.0"
