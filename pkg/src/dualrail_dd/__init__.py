"""Dual-rail logical qubits protected by iSWAP dynamical decoupling: simulation and analysis."""

__version__ = "0.1.0"
