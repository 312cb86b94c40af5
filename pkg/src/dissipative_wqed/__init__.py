"""Dissipatively coupled emitters in one-dimensional photonic lattices.

Single-excitation effective Hamiltonians, pseudo-Hermitian phase analysis,
bound states, exceptional points and normalized non-unitary dynamics.
"""

__version__ = "0.1.0"
