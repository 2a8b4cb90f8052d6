"""Exception types raised by the workbench.

Every error derives from WorkbenchError so callers can catch the whole
family with one clause; the CLI maps them to exit code 2.
"""
from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for all workbench-specific failures."""


class DegenerateFermiPoint(WorkbenchError):
    """Band transform requested at a momentum where the two bands touch."""


class ScaleOutOfRange(WorkbenchError):
    """Scale index outside the valid window for the requested regime."""


class UniverseMismatch(WorkbenchError):
    """Operands built over different Grassmann generator universes."""


class UniverseTooLarge(WorkbenchError):
    """Exact Grassmann computation requested beyond the generator budget."""


class IncompatibleChain(WorkbenchError):
    """Interpolation weight requested for a subset chain the tree does not cross."""


class NotGramFactored(WorkbenchError):
    """Determinant bound requested for a matrix without Gram factor data."""


class MomentumNotOnGrid(WorkbenchError):
    """Symmetry image of a momentum leaves the finite discretization."""


class LatticeTooLarge(WorkbenchError):
    """Exact diagonalization requested beyond the supported lattice sizes."""


class DifferentiationUnstable(WorkbenchError):
    """Numerical differentiation plateau test failed."""


class ConfigInvalid(WorkbenchError):
    """Run configuration failed validation."""


class PresetUnknown(WorkbenchError):
    """CLI preset name not recognized."""
