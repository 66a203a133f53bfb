"""Variational Monte Carlo testbed for symmetrization strategies on periodic fermionic systems."""

__version__ = "0.1.0"
