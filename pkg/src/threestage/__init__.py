"""Simulation and network harness for the three-stage multi-photon protocol."""

__version__ = "0.1.0"
