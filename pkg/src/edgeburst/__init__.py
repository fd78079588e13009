"""Simulation of non-Hermitian quantum ladders with Trotter and LCU circuits."""
__version__ = "0.1.0"
