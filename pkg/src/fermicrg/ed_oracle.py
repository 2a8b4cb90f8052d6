"""Exact-diagonalization oracle on small tori.

Builds the many-body Hamiltonian in a Jordan-Wigner Fock basis whose
orbital order is shared byte-for-byte with the position-space Grassmann
universes: orbital = ((cell * 2 + rho) * 2 + sigma) with cell = n1 * L + n2,
rho = 0 (site x) or 1 (site x + d1), sigma = 0 (up) or 1 (down).

Everything here works in position space; no dispersion closed forms enter
the trace routes, so cross-checks against the momentum-space formulas are
genuinely independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DifferentiationUnstable, LatticeTooLarge
from .honeycomb import HoneycombGeometry, band_transform, dispersion_grid

MAX_ED_L = 2


def orbital_index(geom: HoneycombGeometry, n1: int, n2: int, rho: int, sigma: int) -> int:
    """Flattened orbital index; rho in {0,1} sublattice, sigma in {0,1} spin."""
    cell = (n1 % geom.L) * geom.L + (n2 % geom.L)
    return (cell * 2 + rho) * 2 + sigma


def orbital_count(geom: HoneycombGeometry) -> int:
    return 4 * geom.n_cells


def _annihilate(mask: int, j: int) -> tuple[int, int] | None:
    bit = 1 << j
    if not mask & bit:
        return None
    return mask ^ bit, -1 if (mask & (bit - 1)).bit_count() % 2 else 1


def _create(mask: int, j: int) -> tuple[int, int] | None:
    bit = 1 << j
    if mask & bit:
        return None
    return mask | bit, -1 if (mask & (bit - 1)).bit_count() % 2 else 1


def hopping_bonds(geom: HoneycombGeometry) -> dict[tuple[int, int], float]:
    """Amplitudes of c+_i c_j with i on sublattice 0, j on sublattice 1.

    Site x couples to the second-sublattice orbitals stored at cells x,
    x - l1 and x - l2; on tiny tori several bonds can merge onto one pair.
    """
    amps: dict[tuple[int, int], float] = {}
    L = geom.L
    for n1 in range(L):
        for n2 in range(L):
            for dn1, dn2 in ((0, 0), (-1, 0), (0, -1)):
                for sigma in (0, 1):
                    i = orbital_index(geom, n1, n2, 0, sigma)
                    j = orbital_index(geom, n1 + dn1, n2 + dn2, 1, sigma)
                    amps[(i, j)] = amps.get((i, j), 0.0) - geom.t
    return amps


@dataclass
class Sector:
    """Fixed (n_up, n_down) block of Fock space."""

    n_up: int
    n_down: int
    basis: list[int]
    index: dict[int, int]


@dataclass
class FockSpace:
    """Sector-resolved Fock space over the shared orbital order."""

    geom: HoneycombGeometry
    sectors: dict[tuple[int, int], Sector] = field(default_factory=dict)

    @classmethod
    def build(cls, geom: HoneycombGeometry) -> "FockSpace":
        n_orb = orbital_count(geom)
        up_mask = sum(1 << j for j in range(0, n_orb, 2))
        grouped: dict[tuple[int, int], list[int]] = {}
        for mask in range(1 << n_orb):
            key = ((mask & up_mask).bit_count(), (mask & ~up_mask).bit_count())
            grouped.setdefault(key, []).append(mask)
        sectors = {
            key: Sector(key[0], key[1], basis, {m: i for i, m in enumerate(basis)})
            for key, basis in grouped.items()
        }
        return cls(geom=geom, sectors=sectors)


@dataclass
class EDHamiltonian:
    """Many-body Hamiltonian with lazily diagonalized sectors."""

    geom: HoneycombGeometry
    t: float
    U: float
    fock: FockSpace
    _eig: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def sector_matrix(self, key: tuple[int, int]) -> np.ndarray:
        sec = self.fock.sectors[key]
        dim = len(sec.basis)
        h = np.zeros((dim, dim))
        bonds = hopping_bonds(self.geom)
        for col, mask in enumerate(sec.basis):
            h[col, col] += _interaction_energy(self.geom, self.U, mask)
            for (i, j), amp in bonds.items():
                for a, b in ((i, j), (j, i)):
                    ann = _annihilate(mask, b)
                    if ann is None:
                        continue
                    m1, s1 = ann
                    cre = _create(m1, a)
                    if cre is None:
                        continue
                    m2, s2 = cre
                    h[sec.index[m2], col] += amp * s1 * s2
        return h

    def eigensystem(self, key: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        if key not in self._eig:
            evals, evecs = np.linalg.eigh(self.sector_matrix(key))
            self._eig[key] = (evals, evecs)
        return self._eig[key]

    def spectrum(self) -> dict[tuple[int, int], np.ndarray]:
        return {key: self.eigensystem(key)[0] for key in self.fock.sectors}


def _interaction_energy(geom: HoneycombGeometry, U: float, mask: int) -> float:
    total = 0.0
    for cell in range(geom.n_cells):
        for rho in (0, 1):
            base = (cell * 2 + rho) * 2
            n_up = (mask >> base) & 1
            n_dn = (mask >> (base + 1)) & 1
            total += U * (n_up - 0.5) * (n_dn - 0.5)
    return total


def build_hamiltonian(geom: HoneycombGeometry, t: float | None = None, U: float = 0.0) -> EDHamiltonian:
    if geom.L > MAX_ED_L:
        raise LatticeTooLarge(f"exact diagonalization supports L <= {MAX_ED_L}, got L={geom.L}")
    t_eff = geom.t if t is None else t
    g = geom if t is None or t == geom.t else HoneycombGeometry(L=geom.L, t=t)
    return EDHamiltonian(geom=g, t=t_eff, U=U, fock=FockSpace.build(g))


# ---------------------------------------------------------------------------
# spinless route: at U = 0 the two spin species decouple exactly, so the
# partition function is the square of a spinless many-body trace; the spinless
# trace is still a full Fock-space diagonalization over position-space bonds.
# ---------------------------------------------------------------------------


def _spinless_spectrum(geom: HoneycombGeometry, t: float) -> np.ndarray:
    n_orb = 2 * geom.n_cells
    bonds: dict[tuple[int, int], float] = {}
    L = geom.L
    for n1 in range(L):
        for n2 in range(L):
            for dn1, dn2 in ((0, 0), (-1, 0), (0, -1)):
                i = ((n1 % L) * L + (n2 % L)) * 2
                j = (((n1 + dn1) % L) * L + ((n2 + dn2) % L)) * 2 + 1
                bonds[(i, j)] = bonds.get((i, j), 0.0) - t
    grouped: dict[int, list[int]] = {}
    for mask in range(1 << n_orb):
        grouped.setdefault(mask.bit_count(), []).append(mask)
    evals: list[np.ndarray] = []
    for basis in grouped.values():
        index = {m: i for i, m in enumerate(basis)}
        dim = len(basis)
        h = np.zeros((dim, dim))
        for col, mask in enumerate(basis):
            for (i, j), amp in bonds.items():
                for a, b in ((i, j), (j, i)):
                    ann = _annihilate(mask, b)
                    if ann is None:
                        continue
                    m1, s1 = ann
                    cre = _create(m1, a)
                    if cre is None:
                        continue
                    m2, s2 = cre
                    h[index[m2], col] += amp * s1 * s2
        evals.append(np.linalg.eigvalsh(h))
    return np.concatenate(evals)


def free_energy(spec: EDHamiltonian, beta: float) -> float:
    """-(beta |Lambda|)^-1 log Tr exp(-beta H), stable under energy shifts."""
    cells = spec.geom.n_cells
    if spec.U == 0.0:
        ev = _spinless_spectrum(spec.geom, spec.t)
        e0 = float(ev.min())
        log_z_spinless = -beta * e0 + math.log(float(np.sum(np.exp(-beta * (ev - e0)))))
        # interaction term is exactly -U |Lambda| / 2 at U = 0, i.e. absent
        return -2.0 * log_z_spinless / (beta * cells)
    ev = np.concatenate([spec.eigensystem(key)[0] for key in spec.fock.sectors])
    e0 = float(ev.min())
    log_z = -beta * e0 + math.log(float(np.sum(np.exp(-beta * (ev - e0)))))
    return -log_z / (beta * cells)


def density(spec: EDHamiltonian, beta: float) -> float:
    """Thermal particle density per site; exactly 1 at half filling."""
    sites = 2 * spec.geom.n_cells
    num = 0.0
    den = 0.0
    e0 = min(float(spec.eigensystem(k)[0].min()) for k in spec.fock.sectors)
    for key in spec.fock.sectors:
        ev = spec.eigensystem(key)[0]
        w = float(np.sum(np.exp(-beta * (ev - e0))))
        num += (key[0] + key[1]) * w
        den += w
    return num / (den * sites)


def hp_symmetry_residual(spec: EDHamiltonian) -> float:
    """Hole-particle check: sector (a, b) and (N - a, N - b) are isospectral."""
    n_site = 2 * spec.geom.n_cells
    worst = 0.0
    for (a, b) in spec.fock.sectors:
        ev = np.sort(spec.eigensystem((a, b))[0])
        ev_img = np.sort(spec.eigensystem((n_site - a, n_site - b))[0])
        worst = max(worst, float(np.max(np.abs(ev - ev_img))))
    return worst


def perturbative_coefficients(
    geom: HoneycombGeometry,
    beta: float,
    orders: int = 2,
    u_step: float | None = None,
    plateau_tol: float = 1e-6,
) -> dict[int, float]:
    """Taylor coefficients of U -> f_beta(U) at 0 by Richardson differences.

    Central differences at steps u and 2u are extrapolated; two nested
    extrapolations must agree within plateau_tol or the run aborts.
    """
    if orders > 2:
        raise ValueError("only orders <= 2 are supported")
    u0 = (1e-3 * geom.t) if u_step is None else u_step

    @lru_cache(maxsize=None)
    def f(u: float) -> float:
        return free_energy(build_hamiltonian(geom, U=u), beta)

    out: dict[int, float] = {0: f(0.0)}
    if orders >= 1:

        def s(u: float) -> float:
            return (f(u) - f(-u)) / (2.0 * u)

        r_fine = (4.0 * s(u0 / 2.0) - s(u0)) / 3.0
        r_coarse = (4.0 * s(u0) - s(2.0 * u0)) / 3.0
        if abs(r_fine - r_coarse) > plateau_tol * max(1.0, abs(r_fine)):
            raise DifferentiationUnstable(
                f"first-order plateau failed: {r_fine!r} vs {r_coarse!r}"
            )
        out[1] = r_fine
    if orders >= 2:

        def d(u: float) -> float:
            return (f(u) + f(-u) - 2.0 * f(0.0)) / (2.0 * u * u)

        r_fine = (4.0 * d(u0 / 2.0) - d(u0)) / 3.0
        r_coarse = (4.0 * d(u0) - d(2.0 * u0)) / 3.0
        if abs(r_fine - r_coarse) > plateau_tol * max(1.0, abs(r_fine)):
            raise DifferentiationUnstable(
                f"second-order plateau failed: {r_fine!r} vs {r_coarse!r}"
            )
        out[2] = r_fine
    return out


# ---------------------------------------------------------------------------
# two-point functions of the free theory
# ---------------------------------------------------------------------------


def _fermi_weight(eps: float, beta: float, x0: float) -> float:
    """<T c(x0) c+(0)> for a single mode of energy eps, overflow-safe."""
    be = beta * eps
    if x0 > 0.0:
        # exp(-eps x0) / (1 + exp(-beta eps))
        if be >= 0.0:
            return math.exp(-eps * x0 - math.log1p(math.exp(-be)))
        return math.exp(-eps * (x0 - beta) - math.log1p(math.exp(be)))
    # -exp(-eps (x0 + beta)) / (1 + exp(-beta eps))
    if be >= 0.0:
        return -math.exp(-eps * (x0 + beta) - math.log1p(math.exp(-be)))
    return -math.exp(-eps * x0 - math.log1p(math.exp(be)))


def free_schwinger_2pt(geom: HoneycombGeometry, beta: float, x: tuple[float, int, int]) -> np.ndarray:
    """Free two-point matrix <T Psi-_x Psi+_0> from the sharp band formula.

    x = (x0, n1, n2) with x0 in (-beta/2, beta/2]; spin-diagonal, so a single
    2x2 sublattice block is returned.
    """
    x0, n1, n2 = x
    if not (-beta / 2.0 < x0 <= beta / 2.0):
        raise ValueError("x0 must lie in (-beta/2, beta/2]")
    out = np.zeros((2, 2), dtype=complex)
    for mp in geom.momentum_points():
        kvec = mp.kvec
        phase = np.exp(-1j * (kvec[0] * (n1 * 1.5 + n2 * 1.5) + kvec[1] * (n1 - n2) * math.sqrt(3) / 2.0))
        band = band_transform(geom, mp) if abs(_omega_of(geom, mp)) > 1e-10 else None
        if band is None:
            # bands touch: both energies are zero, any unitary works
            diag = np.diag([_fermi_weight(0.0, beta, x0)] * 2).astype(complex)
            out += phase * diag
            continue
        u = band.unitary
        diag = np.diag([_fermi_weight(band.energies[0], beta, x0), _fermi_weight(band.energies[1], beta, x0)])
        out += phase * (u.conj().T @ diag @ u)
    return out / geom.n_cells


def _omega_of(geom: HoneycombGeometry, mp) -> complex:
    return dispersion_grid(geom)[mp.m1, mp.m2]


def s0_matsubara(
    geom: HoneycombGeometry, beta: float, x: tuple[float, int, int], n_terms: int = 50_000
) -> np.ndarray:
    """Same two-point matrix from the (accelerated) Matsubara representation.

    S0(k) = (h_k - i k0)^(-1); the 1/(i k0) and h_k/(i k0)^2 parts are summed
    in closed form so the truncated tail decays like |k0|^-3.
    """
    from .honeycomb import hopping_block

    x0, n1, n2 = x
    if not (-beta / 2.0 < x0 <= beta / 2.0):
        raise ValueError("x0 must lie in (-beta/2, beta/2]")
    n = np.arange(-n_terms, n_terms)
    k0 = (2.0 * math.pi / beta) * (n + 0.5)
    e_t = np.exp(-1j * k0 * x0)
    ik0 = 1j * k0
    # closed forms of the two subtracted partial waves: the identity part is
    # the epsilon = 0 weight, the h part its first epsilon-derivative
    if x0 > 0.0:
        c1 = 0.5
        c2 = beta / 4.0 - x0 / 2.0
    else:
        c1 = -0.5
        c2 = (x0 + beta) / 2.0 - beta / 4.0
    out = np.zeros((2, 2), dtype=complex)
    for mp in geom.momentum_points():
        kvec = mp.kvec
        phase = np.exp(-1j * (kvec[0] * (n1 * 1.5 + n2 * 1.5) + kvec[1] * (n1 - n2) * math.sqrt(3) / 2.0))
        h = hopping_block(geom, kvec)
        # batched inverse of (h - i k0) over all frequencies
        a, b_, c_, d_ = h[0, 0] - ik0, h[0, 1], h[1, 0], h[1, 1] - ik0
        det = a * d_ - b_ * c_
        inv = np.empty((len(k0), 2, 2), dtype=complex)
        inv[:, 0, 0] = d_ / det
        inv[:, 0, 1] = -b_ / det
        inv[:, 1, 0] = -c_ / det
        inv[:, 1, 1] = a / det
        iden = np.eye(2)
        rem = inv + iden[None, :, :] / ik0[:, None, None] + h[None, :, :] / (ik0**2)[:, None, None]
        tail = np.tensordot(e_t, rem, axes=(0, 0)) / beta
        out += phase * (tail + c1 * iden + c2 * h)
    return out / geom.n_cells


def ed_schwinger_2pt(
    spec: EDHamiltonian, beta: float, x: tuple[float, int, int], sigma: int = 0
) -> np.ndarray:
    """Two-point matrix by direct thermal trace in the Fock basis.

    Exponentially heavy; intended for L = 1 cross-checks of the closed forms.
    """
    geom = spec.geom
    if geom.L > 1:
        raise LatticeTooLarge("direct thermal-trace two-point supports L = 1 only")
    x0, n1, n2 = x
    n_orb = orbital_count(geom)
    dim = 1 << n_orb
    h = np.zeros((dim, dim))
    bonds = hopping_bonds(geom)
    for mask in range(dim):
        h[mask, mask] += _interaction_energy(geom, spec.U, mask)
        for (i, j), amp in bonds.items():
            for a_, b_ in ((i, j), (j, i)):
                ann = _annihilate(mask, b_)
                if ann is None:
                    continue
                m1, s1 = ann
                cre = _create(m1, a_)
                if cre is None:
                    continue
                m2, s2 = cre
                h[m2, mask] += amp * s1 * s2
    evals, vecs = np.linalg.eigh(h)
    evals = evals - evals.min()
    z = float(np.sum(np.exp(-beta * evals)))

    def annihilator(j: int) -> np.ndarray:
        op = np.zeros((dim, dim))
        for mask in range(dim):
            ann = _annihilate(mask, j)
            if ann is not None:
                op[ann[0], mask] = ann[1]
        return vecs.T @ op @ vecs

    out = np.zeros((2, 2), dtype=complex)
    for rho_a in range(2):
        for rho_b in range(2):
            ca = annihilator(orbital_index(geom, n1, n2, rho_a, sigma))
            cb = annihilator(orbital_index(geom, 0, 0, rho_b, sigma))
            if x0 > 0.0:
                w1 = np.exp(-(beta - x0) * evals)
                w2 = np.exp(-x0 * evals)
                val = np.einsum("m,mn,n,nm->", w1, ca, w2, cb.T)
            else:
                w1 = np.exp(-(beta + x0) * evals)
                w2 = np.exp(x0 * evals)
                val = -np.einsum("m,mn,n,nm->", w1, cb.T, w2, ca)
            out[rho_a, rho_b] = val / z
    return out
