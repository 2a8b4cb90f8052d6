"""Invariance transformations of the honeycomb action and kernel structure checks.

Nine operations act on the momentum-labeled Grassmann generators: spin flip,
global U(1) phases, planar spin rotation, the 2pi/3 lattice rotation, complex
conjugation, two reflections, particle-hole exchange, and frequency inversion.
Each is a relabeling of generators with a unitary sublattice factor, and each
leaves two combinations invariant: the quadratic form

    sum_{k,tau} psi+_{k,tau} [[i k0, v0 Omega*(k)], [v0 Omega(k), i k0]] psi-_{k,tau}

and the on-site quartic coupling.  The same transformations pin the shape of
any two-legged kernel produced by the multiscale flow: six exact relabeling
identities on the momentum grid and, near the Fermi points, the local form
-i z0 k0 on the diagonal with delta0 times the dispersion off it, for real
(z0, delta0).

Sublattice phase factors are stored in the gauge diag(1, e^{i k.(d3 - d1)}),
which is periodic under reciprocal-lattice shifts; the half-angle form
diag(e^{-i k.(d3-d1)/2}, e^{+i k.(d3-d1)/2}) differs from it by an overall
scalar that is double valued on the momentum torus, so only the periodic
gauge realizes the rotation exactly on the finite grid (umklapp wraps
included).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import SQRT3
from .cutoffs_propagators import spatial_momenta
from .errors import MomentumNotOnGrid
from .grassmann_engine import (
    GrassmannPoly,
    _bits,
    _merge_sign,
    interaction,
    momentum_universe,
)
from .honeycomb import D1, D2, D3, G1, G2, HoneycombGeometry, MatsubaraGrid, dispersion_grid
from .multiscale_rg import (
    KernelTable,
    _valley_cell,
    effective_two_legged,
    extract_local_couplings,
)

SIGMA1 = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA2 = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SIGMA3 = np.array([[1.0, 0.0], [0.0, -1.0]])

# generic default parameters for the continuous families
THETA_DEFAULT = 0.7
ALPHA_UP_DEFAULT = 0.9
ALPHA_DOWN_DEFAULT = -0.4

_ROT = np.array([[-0.5, -SQRT3 / 2.0], [SQRT3 / 2.0, -0.5]])  # rotation by 2pi/3
_D31 = D3 - D1
_D12 = D1 - D2


def spin_projector(alpha: int) -> np.ndarray:
    """Sublattice projector n_alpha = (1 + alpha sigma3)/2 for alpha = +-1."""
    return 0.5 * (np.eye(2) + alpha * SIGMA3)


@dataclass(frozen=True)
class SymmetryOp:
    """One invariance transformation reduced to its action on generators.

    ``momentum_map`` sends (k0, k1, k2) to its image; ``spinor_matrix(k)`` is
    the unitary sublattice factor multiplying the annihilation doublet and
    ``plus_matrix(k)`` the factor standing to the right of the creation
    doublet (defaults to the elementwise conjugate, which inverts every
    diagonal unitary used here).  ``conjugates`` marks the antilinear op
    (coefficients c -> c*), ``transposes`` marks the exchange of creation and
    annihilation generators.  ``spin_matrix`` is a real rotation of the
    (up, down) doublet and ``spin_phase(eps, sigma)`` a unit scalar per field
    type and spin; ``params`` records the parameters of continuous families.
    """

    name: str
    momentum_map: Callable[[np.ndarray], np.ndarray]
    spinor_matrix: Callable[[np.ndarray], np.ndarray]
    conjugates: bool = False
    transposes: bool = False
    plus_matrix: Callable[[np.ndarray], np.ndarray] | None = None
    spin_matrix: tuple | None = None
    spin_phase: Callable[[int, int], complex] | None = None
    params: tuple = ()


def _keep_momentum(k: np.ndarray) -> np.ndarray:
    return k


def _negate_momentum(k: np.ndarray) -> np.ndarray:
    return -k


def _identity_spinor(k: np.ndarray) -> np.ndarray:
    return np.eye(2, dtype=complex)


def spin_flip() -> SymmetryOp:
    """Exchange of the two spin species at fixed momentum."""
    return SymmetryOp(
        name="spin-flip",
        momentum_map=_keep_momentum,
        spinor_matrix=_identity_spinor,
        spin_matrix=((0.0, 1.0), (1.0, 0.0)),
    )


def global_u1(alpha_up: float = ALPHA_UP_DEFAULT, alpha_down: float = ALPHA_DOWN_DEFAULT) -> SymmetryOp:
    """Independent phase rotation of each spin species: psi^eps -> e^{i eps alpha_sigma} psi^eps."""
    alphas = (alpha_up, alpha_down)

    def phase(eps: int, sigma: int) -> complex:
        return cmath.exp(1j * eps * alphas[sigma])

    return SymmetryOp(
        name="global-U1",
        momentum_map=_keep_momentum,
        spinor_matrix=_identity_spinor,
        spin_phase=phase,
        params=(alpha_up, alpha_down),
    )


def spin_so2(theta: float = THETA_DEFAULT) -> SymmetryOp:
    """Real rotation of the spin doublet, the same matrix for both field types."""
    c, s = math.cos(theta), math.sin(theta)
    return SymmetryOp(
        name="spin-SO2",
        momentum_map=_keep_momentum,
        spinor_matrix=_identity_spinor,
        spin_matrix=((c, -s), (s, c)),
        params=(theta,),
    )


def discrete_rotation() -> SymmetryOp:
    """Lattice rotation by 2pi/3 with the sublattice phase diag(1, e^{i k.(d3-d1)})."""

    def rotate(k: np.ndarray) -> np.ndarray:
        return np.array([k[0], _ROT[0, 0] * k[1] + _ROT[0, 1] * k[2], _ROT[1, 0] * k[1] + _ROT[1, 1] * k[2]])

    def spinor(k: np.ndarray) -> np.ndarray:
        phase = cmath.exp(1j * (k[1] * _D31[0] + k[2] * _D31[1]))
        return np.array([[1.0, 0.0], [0.0, phase]])

    return SymmetryOp(name="discrete-rotation", momentum_map=rotate, spinor_matrix=spinor)


def complex_conjugation() -> SymmetryOp:
    """Antilinear map: momenta negated, every coefficient conjugated."""
    return SymmetryOp(
        name="complex-conjugation",
        momentum_map=_negate_momentum,
        spinor_matrix=_identity_spinor,
        conjugates=True,
    )


def h_reflection() -> SymmetryOp:
    """Reflection k1 -> -k1 combined with the sublattice swap sigma1."""

    def reflect(k: np.ndarray) -> np.ndarray:
        return np.array([k[0], -k[1], k[2]])

    def spinor(k: np.ndarray) -> np.ndarray:
        return SIGMA1.astype(complex)

    return SymmetryOp(name="h-reflection", momentum_map=reflect, spinor_matrix=spinor)


def v_reflection() -> SymmetryOp:
    """Reflection k2 -> -k2; the dispersion is even in k2, so no spinor factor."""

    def reflect(k: np.ndarray) -> np.ndarray:
        return np.array([k[0], k[1], -k[2]])

    return SymmetryOp(name="v-reflection", momentum_map=reflect, spinor_matrix=_identity_spinor)


def particle_hole() -> SymmetryOp:
    """Exchange of creation and annihilation generators at spatially negated momentum."""

    def pmap(k: np.ndarray) -> np.ndarray:
        return np.array([k[0], -k[1], -k[2]])

    def spinor(k: np.ndarray) -> np.ndarray:
        return 1j * np.eye(2, dtype=complex)

    return SymmetryOp(
        name="particle-hole",
        momentum_map=pmap,
        spinor_matrix=spinor,
        plus_matrix=spinor,
        transposes=True,
    )


def inversion() -> SymmetryOp:
    """Frequency flip k0 -> -k0 with the factor -i sigma3 on both field types."""

    def imap(k: np.ndarray) -> np.ndarray:
        return np.array([-k[0], k[1], k[2]])

    def spinor(k: np.ndarray) -> np.ndarray:
        return -1j * SIGMA3.astype(complex)

    return SymmetryOp(
        name="inversion",
        momentum_map=imap,
        spinor_matrix=spinor,
        plus_matrix=spinor,
    )


def standard_ops(
    theta: float = THETA_DEFAULT,
    alpha_up: float = ALPHA_UP_DEFAULT,
    alpha_down: float = ALPHA_DOWN_DEFAULT,
) -> dict[str, SymmetryOp]:
    """All nine operations keyed by name, continuous families at the given parameters."""
    ops = [
        spin_flip(),
        global_u1(alpha_up, alpha_down),
        spin_so2(theta),
        discrete_rotation(),
        complex_conjugation(),
        h_reflection(),
        v_reflection(),
        particle_hole(),
        inversion(),
    ]
    return {op.name: op for op in ops}


# ---------------------------------------------------------------------------
# action on polynomials


def _generator_rules(
    op: SymmetryOp, geom: HoneycombGeometry, grid: MatsubaraGrid
) -> list[tuple[tuple[complex, int], ...]]:
    """Image of every generator as a sum of weighted generators.

    Raises MomentumNotOnGrid when the momentum map leaves the finite grid.
    """
    L = geom.L
    F = grid.n_freq
    freqs = grid.frequencies
    sp = spatial_momenta(geom)
    spin = np.asarray(op.spin_matrix, dtype=complex) if op.spin_matrix is not None else np.eye(2, dtype=complex)
    rules: list = [None] * (4 * F * L * L * 2)
    for f in range(F):
        k0 = float(freqs[f])
        for m1 in range(L):
            for m2 in range(L):
                k = np.array([k0, sp[m1, m2, 0], sp[m1, m2, 1]])
                kp = np.asarray(op.momentum_map(k), dtype=float)
                df = np.abs(freqs - kp[0])
                f2 = int(np.argmin(df))
                if df[f2] > 1e-9 * max(1.0, abs(kp[0])):
                    raise MomentumNotOnGrid(
                        f"{op.name}: image frequency {kp[0]:.6g} is not a kept Matsubara frequency"
                    )
                pt = geom.momentum_index(kp[1:])
                sm = np.asarray(op.spinor_matrix(k), dtype=complex)
                pm = np.conj(sm) if op.plus_matrix is None else np.asarray(op.plus_matrix(k), dtype=complex)
                cell = ((f * L + m1) * L + m2) * 2
                cell2 = ((f2 * L + pt.m1) * L + pt.m2) * 2
                for sigma in (0, 1):
                    for rho in (0, 1):
                        mode = (cell + sigma) * 2 + rho
                        for kind in (0, 1):  # 0 annihilation, 1 creation
                            eps = 1 if kind else -1
                            kind2 = 1 - kind if op.transposes else kind
                            scalar = op.spin_phase(eps, sigma) if op.spin_phase is not None else 1.0
                            targets = []
                            for sigma2 in (0, 1):
                                rs = spin[sigma, sigma2]
                                if rs == 0:
                                    continue
                                for rho2 in (0, 1):
                                    w = sm[rho, rho2] if kind == 0 else pm[rho2, rho]
                                    if w == 0:
                                        continue
                                    mode2 = (cell2 + sigma2) * 2 + rho2
                                    targets.append((scalar * rs * w, 2 * mode2 + kind2))
                            rules[2 * mode + kind] = tuple(targets)
    return rules


def apply(
    op: SymmetryOp, poly: GrassmannPoly, geom: HoneycombGeometry, grid: MatsubaraGrid
) -> GrassmannPoly:
    """Transform a polynomial over the momentum universe by the operation.

    Generators are relabeled through the momentum map, sublattice and spin
    factors expand each generator into its image combination, and antilinear
    ops conjugate the input coefficients.  The product order of every
    monomial is preserved, so all anticommutation signs are exact.
    """
    rules = _generator_rules(op, geom, grid)
    out: dict[int, complex] = {}
    for mask, coeff in poly.terms.items():
        c0 = complex(coeff).conjugate() if op.conjugates else complex(coeff)
        states = [(c0, 0)]
        for g in _bits(mask):
            nxt = []
            for c, omask in states:
                for w, g2 in rules[g]:
                    bit = 1 << g2
                    if omask & bit:
                        continue
                    nxt.append((c * w * _merge_sign(omask, bit), omask | bit))
            states = nxt
        for c, omask in states:
            out[omask] = out.get(omask, 0j) + c
    return GrassmannPoly(poly.universe, out)


def kinetic_combination(geom: HoneycombGeometry, grid: MatsubaraGrid) -> GrassmannPoly:
    """The invariant quadratic form psi+ [[ik0, v0 Om*], [v0 Om, ik0]] psi-, summed over k, spin."""
    universe = momentum_universe(geom, grid)
    om = dispersion_grid(geom)
    v0 = geom.v0
    L = geom.L
    terms: dict[int, complex] = {}
    for f in range(grid.n_freq):
        ik0 = 1j * float(grid.frequencies[f])
        for m1 in range(L):
            for m2 in range(L):
                o = complex(om[m1, m2])
                mat = ((ik0, v0 * o.conjugate()), (v0 * o, ik0))
                cell = ((f * L + m1) * L + m2) * 2
                for sigma in (0, 1):
                    base = (cell + sigma) * 2
                    for rho in (0, 1):
                        gp = 2 * (base + rho) + 1
                        for rho2 in (0, 1):
                            c = mat[rho][rho2]
                            if c == 0:
                                continue
                            gm = 2 * (base + rho2)
                            mask = (1 << gp) | (1 << gm)
                            sign = 1 if gp < gm else -1
                            terms[mask] = terms.get(mask, 0j) + sign * c
    return GrassmannPoly(universe, terms)


def quartic_combination(geom: HoneycombGeometry, grid: MatsubaraGrid, u: float = 1.0) -> GrassmannPoly:
    """The on-site coupling, written over momentum generators with exact conservation."""
    return interaction(geom, grid, u)


def _sup_diff(a: GrassmannPoly, b: GrassmannPoly) -> float:
    keys = set(a.terms) | set(b.terms)
    return max((abs(a.terms.get(m, 0j) - b.terms.get(m, 0j)) for m in keys), default=0.0)


def check_quadratic_invariance(
    op: SymmetryOp, geom: HoneycombGeometry, grid: MatsubaraGrid
) -> float:
    """Sup-norm residual of the transformed quadratic form against the original."""
    star = kinetic_combination(geom, grid)
    return _sup_diff(apply(op, star, geom, grid), star)


def check_quartic_invariance(
    op: SymmetryOp, geom: HoneycombGeometry, grid: MatsubaraGrid, u: float = 1.0
) -> float:
    """Sup-norm residual of the transformed quartic coupling against the original."""
    v = quartic_combination(geom, grid, u)
    return _sup_diff(apply(op, v, geom, grid), v)


def involution_defect(
    op: SymmetryOp,
    geom: HoneycombGeometry,
    grid: MatsubaraGrid,
    poly: GrassmannPoly | None = None,
) -> float:
    """Distance of the doubled operation from the identity on an even polynomial."""
    if poly is None:
        poly = kinetic_combination(geom, grid)
    twice = apply(op, apply(op, poly, geom, grid), geom, grid)
    return _sup_diff(twice, poly)


def rotation_orbit_permutation(geom: HoneycombGeometry) -> np.ndarray:
    """Brute-force orbit of the grid under the 2pi/3 rotation.

    Returns the flat index permutation; raises MomentumNotOnGrid if any image
    leaves the grid or the map fails to be a bijection.
    """
    L = geom.L
    perm = np.empty(L * L, dtype=int)
    for m1 in range(L):
        for m2 in range(L):
            k = (m1 * G1 + m2 * G2) / L
            pt = geom.momentum_index(_ROT @ k)
            perm[m1 * L + m2] = pt.m1 * L + pt.m2
    if sorted(perm.tolist()) != list(range(L * L)):
        raise MomentumNotOnGrid("rotation image fails to permute the momentum grid")
    return perm


# ---------------------------------------------------------------------------
# dispersion and projector identities used in the invariance proofs


def omega_rotation_residual(geom: HoneycombGeometry) -> float:
    """sup_k |Omega(k) e^{-i k.(d3-d1)} - Omega(R^{2pi/3} k)| over the grid."""
    sp = spatial_momenta(geom)
    om = dispersion_grid(geom)
    phase = np.exp(-1j * (sp[..., 0] * _D31[0] + sp[..., 1] * _D31[1]))
    rk1 = _ROT[0, 0] * sp[..., 0] + _ROT[0, 1] * sp[..., 1]
    rk2 = _ROT[1, 0] * sp[..., 0] + _ROT[1, 1] * sp[..., 1]
    rotated = (2.0 / 3.0) * (1.0 + 2.0 * np.exp(-1.5j * rk1) * np.cos(SQRT3 * rk2 / 2.0))
    return float(np.max(np.abs(om * phase - rotated)))


def omega_reflection_residuals(geom: HoneycombGeometry) -> dict[str, float]:
    """Reflection identities of the dispersion, checked through the grid index maps.

    Flipping k1 conjugates Omega (the sigma1 reflection), flipping k2 leaves
    it unchanged (the plain reflection); both are exercised modulo the
    reciprocal lattice by mapping grid indices instead of raw vectors.
    """
    L = geom.L
    om = dispersion_grid(geom)
    m = np.arange(L)
    m1 = m[:, None]
    m2 = m[None, :]
    flipped_k1 = om[(-m2) % L, (-m1) % L]
    flipped_k2 = om[m2, m1]
    return {
        "h_reflection_conjugates": float(np.max(np.abs(np.conj(om) - flipped_k1))),
        "v_reflection_even": float(np.max(np.abs(om - flipped_k2))),
    }


def pauli_projector_identities() -> dict[str, bool]:
    """Exact matrix identities behind the quartic invariance proofs."""
    flips = all(
        np.array_equal(SIGMA1 @ spin_projector(a) @ SIGMA1, spin_projector(-a)) for a in (1, -1)
    )
    fixes = all(
        np.array_equal(SIGMA3 @ spin_projector(a) @ SIGMA3, spin_projector(a)) for a in (1, -1)
    )
    sym = all(np.array_equal(spin_projector(a).T, spin_projector(a)) for a in (1, -1))
    return {"sigma1_maps_to_opposite": flips, "sigma3_fixes": fixes, "transpose_fixes": sym}


# ---------------------------------------------------------------------------
# two-legged kernel structure


def w2_relation_residuals(
    kernel2: KernelTable, geom: HoneycombGeometry, grid: MatsubaraGrid
) -> dict[str, float]:
    """The six exact relabeling identities of the two-legged kernel.

    Each relation expresses W at one grid momentum through W at a mapped
    momentum, conjugated or sandwiched with sigma matrices; residuals are
    sup norms relative to the kernel scale.  The rotation row needs the
    Fermi points on the grid, hence 3 | L.
    """
    if geom.L % 3 != 0:
        raise MomentumNotOnGrid("kernel rotation relation requires L divisible by 3")
    w = kernel2.w2
    L = geom.L
    scale = float(np.max(np.abs(w)))
    denom = max(scale, 1e-300)
    m = np.arange(L)
    m1 = m[:, None]
    m2 = m[None, :]
    neg = ((-m1) % L, (-m2) % L)
    out = {}

    # W(k) = Phi W(k0, R^{-2pi/3} kvec) Phi^{-1}, Phi = diag(1, e^{-i k.(d1-d2)})
    sp = spatial_momenta(geom)
    full = np.exp(1j * (sp[..., 0] * _D12[0] + sp[..., 1] * _D12[1]))
    wr = w[:, (-m2) % L, (m1 - m2) % L]
    t = wr.copy()
    t[..., 0, 1] = wr[..., 0, 1] * full
    t[..., 1, 0] = wr[..., 1, 0] * np.conj(full)
    out["discrete-rotation"] = float(np.max(np.abs(w - t)) / denom)

    # W(k) = W*(-k)
    t = np.conj(w[::-1][:, neg[0], neg[1]])
    out["complex-conjugation"] = float(np.max(np.abs(w - t)) / denom)

    # W(k) = sigma1 W(k0, -k1, k2) sigma1
    t = w[:, (-m2) % L, (-m1) % L][..., ::-1, ::-1]
    out["h-reflection"] = float(np.max(np.abs(w - t)) / denom)

    # W(k) = W(k0, k1, -k2)
    t = w[:, m2, m1]
    out["v-reflection"] = float(np.max(np.abs(w - t)) / denom)

    # W(k) = W(k0, -kvec)^T
    t = np.swapaxes(w[:, neg[0], neg[1]], -1, -2)
    out["particle-hole"] = float(np.max(np.abs(w - t)) / denom)

    # W(k) = -sigma3 W(-k0, kvec) sigma3
    wi = w[::-1]
    t = np.empty_like(wi)
    t[..., 0, 0] = -wi[..., 0, 0]
    t[..., 0, 1] = wi[..., 0, 1]
    t[..., 1, 0] = wi[..., 1, 0]
    t[..., 1, 1] = -wi[..., 1, 1]
    out["inversion"] = float(np.max(np.abs(w - t)) / denom)
    return out


def check_w2_structure(
    kernel2: KernelTable, geom: HoneycombGeometry, grid: MatsubaraGrid
) -> dict:
    """Structure report for a two-legged kernel from the multiscale flow.

    Verifies the six relabeling identities, measures the kernel at the Fermi
    points, and fits the local couplings: the frequency derivative should be
    -i z0 times the identity and the spatial derivatives should reproduce the
    delta0 dispersion structure, with z0 and delta0 real.  All deviations are
    reported; nothing is hidden in the fit.
    """
    w = kernel2.w2
    F = grid.n_freq
    ip, im = F // 2, F // 2 - 1
    dk0 = 2.0 * math.pi / grid.beta
    relations = w2_relation_residuals(kernel2, geom, grid)
    loc = extract_local_couplings(kernel2, geom, grid)
    z0 = loc["z"]
    fermi_vals = []
    freq_offdiag = 0.0
    freq_diag_asym = 0.0
    freq_structure = 0.0
    spatial_diag = 0.0
    for omega in (1, -1):
        (c1, c2), _ = _valley_cell(geom, omega)
        fermi_vals.append(float(np.max(np.abs(w[(ip, im), c1, c2]))))
        d = (w[ip, c1, c2] - w[im, c1, c2]) / dk0
        freq_offdiag = max(freq_offdiag, float(abs(d[0, 1])), float(abs(d[1, 0])))
        freq_diag_asym = max(freq_diag_asym, float(abs(d[0, 0] - d[1, 1])))
        freq_structure = max(freq_structure, float(abs(d[0, 0] + 1j * z0)))
        if geom.L > 1:
            w11 = 0.5 * (w[ip, :, :, 0, 0] + w[im, :, :, 0, 0])
            for step in ((1, 0), (0, 1)):
                fwd = ((c1 + step[0]) % geom.L, (c2 + step[1]) % geom.L)
                bwd = ((c1 - step[0]) % geom.L, (c2 - step[1]) % geom.L)
                spatial_diag = max(spatial_diag, float(abs(0.5 * (w11[fwd] - w11[bwd]))))
    direction_spread = max(
        loc["per_valley"][1]["delta_direction_spread"],
        loc["per_valley"][-1]["delta_direction_spread"],
    )
    return {
        "scale": kernel2.scale,
        "regime": kernel2.regime,
        "u": kernel2.u,
        "w2_max": float(np.max(np.abs(w))),
        "relations": relations,
        "relation_max": max(relations.values()),
        "fermi_point_value": max(fermi_vals),
        "z0": z0,
        "delta0": loc["delta"],
        "z0_imag": loc["z_imag"],
        "delta0_imag": loc["delta_imag"],
        "valley_spread_z": loc["valley_spread_z"],
        "valley_spread_delta": loc["valley_spread_delta"],
        "delta_direction_spread": direction_spread,
        "valley_offset": loc["valley_offset"],
        "freq_derivative_offdiag": freq_offdiag,
        "freq_derivative_asym": freq_diag_asym,
        "freq_structure_residual": freq_structure,
        "spatial_diag_residual": spatial_diag,
    }


def effective_kernel_table(
    geom: HoneycombGeometry, grid: MatsubaraGrid, u: float = 1.0
) -> KernelTable:
    """Two-legged kernel of the theory after the high-frequency integration.

    Second order in the coupling, evaluated on the full grid; this is the
    kernel whose shape the relabeling identities and Fermi-point fits
    constrain.
    """
    base = effective_two_legged(geom, grid, h_low=1)
    return KernelTable(scale=0, regime="ir", u=u, w2=(u * u) * base)


def w2_structure_sequence(
    configs: Sequence[tuple[int, float, int]], u: float = 1.0
) -> list[dict]:
    """Structure reports over a growing (L, beta, M) sequence.

    The Fermi-point value of the kernel must shrink along a sequence with
    growing beta and L; the decrease rate is reported, not asserted.
    """
    out = []
    for L, beta, M in configs:
        geom = HoneycombGeometry(L=L)
        grid = MatsubaraGrid(beta=beta, M=M)
        rep = check_w2_structure(effective_kernel_table(geom, grid, u), geom, grid)
        rep["config"] = {"L": L, "beta": beta, "M": M}
        out.append(rep)
    return out


# ---------------------------------------------------------------------------
# aggregate report (CLI entry point)


def _closure_residual(
    op: SymmetryOp, geom: HoneycombGeometry, grid: MatsubaraGrid, poly: GrassmannPoly
) -> float:
    """Residual of the op composed with its inverse (or cubed, for the rotation)."""
    if op.name == "discrete-rotation":
        p = poly
        for _ in range(3):
            p = apply(op, p, geom, grid)
        return _sup_diff(p, poly)
    if op.name == "global-U1":
        inv = global_u1(-op.params[0], -op.params[1])
    elif op.name == "spin-SO2":
        inv = spin_so2(-op.params[0])
    else:
        inv = op
    return _sup_diff(apply(inv, apply(op, poly, geom, grid), geom, grid), poly)


def symmetry_report(
    L: int, beta: float, M: int, U: float = 1.0, tol: float = 1e-12
) -> dict:
    """Pass/fail matrix over all nine operations plus the kernel structure block.

    Polynomial checks walk every monomial, so the runtime grows with the
    sixth power of the mode count; intended for desk-scale grids.
    """
    geom = HoneycombGeometry(L=L)
    grid = MatsubaraGrid(beta=beta, M=M)
    star = kinetic_combination(geom, grid)
    quartic = quartic_combination(geom, grid, U)
    ops = {}
    for name, op in standard_ops().items():
        try:
            quad = _sup_diff(apply(op, star, geom, grid), star)
            quart = _sup_diff(apply(op, quartic, geom, grid), quartic)
            closure = _closure_residual(op, geom, grid, star)
            ops[name] = {
                "quadratic_residual": quad,
                "quartic_residual": quart,
                "closure_residual": closure,
                "pass": bool(quad < tol and quart < tol and closure < tol),
            }
        except MomentumNotOnGrid as exc:
            ops[name] = {"pass": False, "error": str(exc)}
    identities = {
        "rotation_phase_residual": omega_rotation_residual(geom),
        **omega_reflection_residuals(geom),
        **pauli_projector_identities(),
    }
    try:
        kernel = effective_kernel_table(geom, grid, U)
        struct = check_w2_structure(kernel, geom, grid)
        struct["pass"] = bool(
            struct["relation_max"] < tol
            and struct["z0_imag"] < 1e-6 * abs(struct["z0"]) + 1e-10
            and struct["delta0_imag"] < 1e-6 * abs(struct["delta0"]) + 1e-10
        )
    except MomentumNotOnGrid as exc:
        struct = {"pass": False, "error": str(exc)}
    ok = all(row["pass"] for row in ops.values()) and struct["pass"]
    return {
        "config": {"L": L, "beta": beta, "M": M, "U": U, "tolerance": tol},
        "ops": ops,
        "identities": identities,
        "w2_structure": struct,
        "pass": bool(ok),
    }
