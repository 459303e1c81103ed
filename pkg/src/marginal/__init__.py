"""Simulation and verification toolkit for marginally relevant directed polymers."""

__version__ = "0.1.0"
