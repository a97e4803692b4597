"""Numerical laboratory for period-doubling renormalization of reversible
area-preserving twist maps: fixed point, invariant Cantor set, rigidity
constants, and the distortion calculus."""

__version__ = "0.1.0"
