"""Constructive-renormalization-group workbench for the half-filled
honeycomb Hubbard model at exact desk scale.

Subpackages cover the free theory, cutoff propagators, a finite Grassmann
calculus, diagram and determinant expansions, the multiscale flow, lattice
symmetries, and an exact-diagonalization oracle for cross-validation.
"""

__version__ = "0.1.0"
