"""Thermodynamic Cucker-Smale flocking: classical and relativistic models."""

__version__ = "0.1.0"
