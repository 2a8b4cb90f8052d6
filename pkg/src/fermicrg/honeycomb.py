"""Honeycomb lattice geometry, complex dispersion, bands, free thermodynamics.

Conventions (nearest-neighbour distance = 1, hopping t > 0):
  basis vectors      l1 = (3/2,  sqrt3/2),  l2 = (3/2, -sqrt3/2)
  neighbour vectors  d1 = (1,0), d2 = (-1/2, sqrt3/2), d3 = (-1/2, -sqrt3/2)
  reciprocal basis   G1 = (2pi/3)(1,  sqrt3), G2 = (2pi/3)(1, -sqrt3)
  dispersion         Omega(k) = (2/3) * (1 + 2 exp(-i 3 k1 / 2) cos(sqrt3 k2 / 2))
  bands              -+ v0 |Omega(k)|  with v0 = 3t/2.

The two-component spinor pairs the site x on the first sublattice with
x + d1 on the second, so all propagators carry cell coordinates only.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import CHI0_HI, SQRT3, T_DEFAULT, v0
from .errors import DegenerateFermiPoint, MomentumNotOnGrid

L1VEC = np.array([1.5, SQRT3 / 2.0])
L2VEC = np.array([1.5, -SQRT3 / 2.0])
D1 = np.array([1.0, 0.0])
D2 = np.array([-0.5, SQRT3 / 2.0])
D3 = np.array([-0.5, -SQRT3 / 2.0])
G1 = (2.0 * math.pi / 3.0) * np.array([1.0, SQRT3])
G2 = (2.0 * math.pi / 3.0) * np.array([1.0, -SQRT3])

# Brillouin-zone area |B| = 8 pi^2 / (3 sqrt3)
BZ_AREA = 8.0 * math.pi**2 / (3.0 * SQRT3)


@dataclass(frozen=True)
class MomentumPoint:
    """Grid momentum (m1/L) G1 + (m2/L) G2 with integer indices in [0, L)."""

    m1: int
    m2: int
    L: int

    @property
    def kvec(self) -> np.ndarray:
        return (self.m1 * G1 + self.m2 * G2) / self.L

    def shift(self, dm1: int, dm2: int) -> "MomentumPoint":
        return MomentumPoint((self.m1 + dm1) % self.L, (self.m2 + dm2) % self.L, self.L)


@dataclass(frozen=True)
class HoneycombGeometry:
    """Periodic L x L honeycomb torus with hopping amplitude t."""

    L: int
    t: float = T_DEFAULT

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError("L must be a positive integer")

    @property
    def n_cells(self) -> int:
        return self.L * self.L

    @property
    def v0(self) -> float:
        return v0(self.t)

    def cell_position(self, n1: int, n2: int) -> np.ndarray:
        return n1 * L1VEC + n2 * L2VEC

    def momentum(self, m1: int, m2: int) -> MomentumPoint:
        return MomentumPoint(m1 % self.L, m2 % self.L, self.L)

    def momentum_points(self) -> list[MomentumPoint]:
        return [MomentumPoint(m1, m2, self.L) for m1 in range(self.L) for m2 in range(self.L)]

    def fractional_coords(self, kvec: np.ndarray) -> tuple[float, float]:
        """Coordinates (a1, a2) with k = a1 G1 + a2 G2, each reduced to [0, 1)."""
        a1 = float(np.dot(kvec, L1VEC)) / (2.0 * math.pi) % 1.0
        a2 = float(np.dot(kvec, L2VEC)) / (2.0 * math.pi) % 1.0
        return a1, a2

    def momentum_index(self, kvec: np.ndarray, snap: float = 1e-9) -> MomentumPoint:
        """Reduce a cartesian momentum to its grid point modulo G1, G2."""
        a1, a2 = self.fractional_coords(kvec)
        m1 = round(a1 * self.L)
        m2 = round(a2 * self.L)
        if abs(a1 * self.L - m1) > snap * self.L or abs(a2 * self.L - m2) > snap * self.L:
            raise MomentumNotOnGrid(f"momentum {kvec} is not on the {self.L}x{self.L} grid")
        return MomentumPoint(m1 % self.L, m2 % self.L, self.L)


def dispersion_cartesian(kvec: np.ndarray) -> complex:
    """Omega(k) for a cartesian momentum; vanishes exactly at the Fermi points."""
    k1, k2 = float(kvec[0]), float(kvec[1])
    return (2.0 / 3.0) * (1.0 + 2.0 * cmath.exp(-1.5j * k1) * math.cos(SQRT3 * k2 / 2.0))


def dispersion(geom: HoneycombGeometry, k: "MomentumPoint | np.ndarray") -> complex:
    kvec = k.kvec if isinstance(k, MomentumPoint) else np.asarray(k, dtype=float)
    return dispersion_cartesian(kvec)


def dispersion_grid(geom: HoneycombGeometry) -> np.ndarray:
    """Omega on the full momentum grid, shape (L, L) indexed by (m1, m2)."""
    m = np.arange(geom.L)
    a1, a2 = np.meshgrid(m, m, indexing="ij")
    k1 = (a1 * G1[0] + a2 * G2[0]) / geom.L
    k2 = (a1 * G1[1] + a2 * G2[1]) / geom.L
    return (2.0 / 3.0) * (1.0 + 2.0 * np.exp(-1.5j * k1) * np.cos(SQRT3 * k2 / 2.0))


def fermi_points(geom: HoneycombGeometry) -> tuple[np.ndarray, np.ndarray]:
    """The two inequivalent zeros of Omega: (2pi/3, omega 2pi/(3 sqrt3))."""
    plus = np.array([2.0 * math.pi / 3.0, 2.0 * math.pi / (3.0 * SQRT3)])
    minus = np.array([2.0 * math.pi / 3.0, -2.0 * math.pi / (3.0 * SQRT3)])
    return plus, minus


def fermi_point(omega: int) -> np.ndarray:
    """Single Fermi point for valley label omega = +1 or -1."""
    return np.array([2.0 * math.pi / 3.0, omega * 2.0 * math.pi / (3.0 * SQRT3)])


def fermi_point_indices(geom: HoneycombGeometry, omega: int) -> MomentumPoint:
    """Grid indices of a Fermi point; requires 3 | L."""
    if geom.L % 3 != 0:
        raise MomentumNotOnGrid("Fermi points lie on the grid only when 3 divides L")
    L = geom.L
    if omega == 1:
        return MomentumPoint((2 * L) // 3, L // 3, L)
    return MomentumPoint(L // 3, (2 * L) // 3, L)


@dataclass(frozen=True)
class BandData:
    """Band energies and the unitary congruence that diagonalizes hopping."""

    kvec: np.ndarray
    omega_value: complex
    energies: tuple[float, float]
    unitary: np.ndarray


def band_transform(geom: HoneycombGeometry, k: "MomentumPoint | np.ndarray") -> BandData:
    """Unitary U_k with U_k h_k U_k^dagger = diag(-v0|Omega|, +v0|Omega|).

    h_k = -v0 [[0, Omega*], [Omega, 0]] is the hopping block; the transform
    is singular where the bands touch.
    """
    kvec = k.kvec if isinstance(k, MomentumPoint) else np.asarray(k, dtype=float)
    om = dispersion_cartesian(kvec)
    mod = abs(om)
    if mod < 1e-10:
        raise DegenerateFermiPoint(f"bands touch at k={kvec}; |Omega|={mod:.3e}")
    phase = om / mod
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    u = np.array(
        [
            [inv_sqrt2, np.conj(phase) * inv_sqrt2],
            [-phase * inv_sqrt2, inv_sqrt2],
        ],
        dtype=complex,
    )
    e = geom.v0 * mod
    return BandData(kvec=kvec, omega_value=om, energies=(-e, e), unitary=u)


def hopping_block(geom: HoneycombGeometry, kvec: np.ndarray) -> np.ndarray:
    om = dispersion_cartesian(kvec)
    return -geom.v0 * np.array([[0.0, np.conj(om)], [om, 0.0]], dtype=complex)


def free_specific_energy(geom: HoneycombGeometry) -> float:
    """Ground-state energy per cell at U = 0: -(2 v0 / |Lambda|) sum_k |Omega|."""
    return -2.0 * geom.v0 * float(np.mean(np.abs(dispersion_grid(geom))))


def free_specific_free_energy(geom: HoneycombGeometry, beta: float) -> float:
    """Free energy per cell at U = 0, overflow-safe.

    f = -(2 / (beta |Lambda|)) sum_k log(2 + 2 cosh(beta v0 |Omega|)).
    """
    y = beta * geom.v0 * np.abs(dispersion_grid(geom))
    log_term = y + 2.0 * np.log1p(np.exp(-y))
    return -2.0 / beta * float(np.mean(log_term))


def _bz_quadrature(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint grid on the (a1, a2) unit square parametrizing the zone."""
    a = (np.arange(n) + 0.5) / n
    a1, a2 = np.meshgrid(a, a, indexing="ij")
    k1 = a1 * G1[0] + a2 * G2[0]
    k2 = a1 * G1[1] + a2 * G2[1]
    return k1, k2


def free_specific_energy_limit(t: float = T_DEFAULT, n: int = 600) -> float:
    """Thermodynamic-limit ground-state energy: -(2 v0 / |B|) integral |Omega|."""
    k1, k2 = _bz_quadrature(n)
    om = (2.0 / 3.0) * (1.0 + 2.0 * np.exp(-1.5j * k1) * np.cos(SQRT3 * k2 / 2.0))
    return -2.0 * v0(t) * float(np.mean(np.abs(om)))


def free_specific_free_energy_limit(beta: float, t: float = T_DEFAULT, n: int = 600) -> float:
    """Thermodynamic-limit free energy per cell at U = 0."""
    k1, k2 = _bz_quadrature(n)
    om = (2.0 / 3.0) * (1.0 + 2.0 * np.exp(-1.5j * k1) * np.cos(SQRT3 * k2 / 2.0))
    y = beta * v0(t) * np.abs(om)
    return -2.0 / beta * float(np.mean(y + 2.0 * np.log1p(np.exp(-y))))


@dataclass(frozen=True)
class MatsubaraGrid:
    """Fermionic frequencies k0 = (2pi/beta)(n0 + 1/2) inside the UV cutoff.

    The cutoff chi0(2^-M |k0|) is nonzero exactly for |k0| < (2/3) 2^M, so the
    grid keeps all half-integers n0 + 1/2 with |n0 + 1/2| < beta 2^M / (3 pi).
    """

    beta: float
    M: int

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.n_freq == 0:
            raise ValueError("cutoff excludes every Matsubara frequency")

    @property
    def half_integer_bound(self) -> float:
        return self.beta * (2.0**self.M) * CHI0_HI / (2.0 * math.pi)

    @property
    def n_max(self) -> int:
        # largest n0 with n0 + 1/2 < bound (strict: boundary modes have chi0 = 0)
        b = self.half_integer_bound
        n = math.floor(b - 0.5)
        if n + 0.5 >= b:
            n -= 1
        return n

    @property
    def n_indices(self) -> np.ndarray:
        n = self.n_max
        return np.arange(-n - 1, n + 1)

    @property
    def frequencies(self) -> np.ndarray:
        return (2.0 * math.pi / self.beta) * (self.n_indices + 0.5)

    @property
    def n_freq(self) -> int:
        return 2 * (self.n_max + 1)


@lru_cache(maxsize=None)
def _cached_grid(beta: float, M: int) -> MatsubaraGrid:
    return MatsubaraGrid(beta=beta, M=M)
