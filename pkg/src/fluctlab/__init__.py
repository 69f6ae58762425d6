"""Fluctuation experiments for mean-field diffusions on a lattice with power-law weights."""
__version__ = "0.1.0"
