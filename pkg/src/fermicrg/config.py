"""Shared numerical constants and tolerance defaults.

The smooth cutoff chi0 is supported on |s| < CHI0_HI and equals 1 for
|s| <= CHI0_LO; both constants live here so grid builders can decide
membership without importing the cutoff module.
"""
from __future__ import annotations

import json
import math
from typing import Any

SQRT3 = math.sqrt(3.0)

# chi0 support radii
CHI0_LO = 1.0 / 3.0
CHI0_HI = 2.0 / 3.0

# default hopping amplitude; the Fermi velocity is always 3t/2
T_DEFAULT = 1.0

# tolerance tiers: exact identities vs quadrature/extrapolation-affected
TOL_EXACT = 1e-12
TOL_QUAD = 1e-9

# snapping tolerance for momentum reduction to the fundamental domain
SNAP_TOL = 1e-9

# largest generator count for exact Grassmann partition functions
MAX_EXACT_GENERATORS = 24

# largest cluster count for truncated-expectation partition sums
MAX_CLUSTERS = 6

# default anisotropy-free scaling exponent theta in (0, 1)
THETA_DEFAULT = 0.5


def v0(t: float = T_DEFAULT) -> float:
    """Fermi velocity 3t/2 of the half-filled honeycomb band structure."""
    return 1.5 * t


def rel_close(a: float, b: float, tol: float) -> bool:
    """Relative comparison safe near zero: |a-b| <= tol * max(|a|,|b|,1)."""
    return abs(a - b) <= tol * max(abs(a), abs(b), 1.0)


def canonical_json(obj: Any) -> str:
    """Deterministic JSON used by the CLI: sorted keys, fixed separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
