"""Simulation, correlation and fitting toolkit for three-level single-photon emitters."""

__version__ = "0.1.0"
