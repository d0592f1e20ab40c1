"""Lagrangian free-boundary simulator for a 2D viscoelastic fluid in a square-root chart."""

__version__ = "0.1.0"
