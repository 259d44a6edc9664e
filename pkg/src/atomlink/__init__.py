"""Quantum-trajectory simulator for entangling distant atoms via two lossy cavities."""

__version__ = "0.1.0"
