"""Smooth cutoffs, scale-resolved propagators, Gram factors, decay reports.

All position-space values are finite Fourier sums over the momentum grid,
synthesized exactly (spatial DFT + frequency contraction); no quadrature in
imaginary time ever enters a propagator value.

Scale conventions:
  UV scales h = 1..M slice the frequency cutoff chi0(2^-M |k0|) through
  H_1 = chi0(|k0|/2), H_h = chi0(2^-h |k0|) - chi0(2^-h+1 |k0|).
  IR scales h = h_beta..0 slice the valley support chi0(|k'|) through
  f_h = chi0(2^-h |k'|) - chi0(2^-h+1 |k'|), with k' the three-momentum
  measured from a Fermi point (spatial part reduced modulo the reciprocal
  lattice to its shortest representative).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import CHI0_HI, CHI0_LO, SQRT3
from .errors import ScaleOutOfRange
from .honeycomb import (
    G1,
    G2,
    L1VEC,
    L2VEC,
    HoneycombGeometry,
    MatsubaraGrid,
    fermi_point,
)

# ---------------------------------------------------------------------------
# smooth compact-support cutoff
# ---------------------------------------------------------------------------


def _phi(s: np.ndarray | float) -> np.ndarray:
    """exp(-1/s) continued by 0 for s <= 0; all derivatives vanish at 0."""
    s_arr = np.asarray(s, dtype=float)
    out = np.zeros_like(s_arr)
    pos = s_arr > 0
    out[pos] = np.exp(-1.0 / s_arr[pos])
    return out


def chi0(t: np.ndarray | float) -> np.ndarray | float:
    """C-infinity bump: 1 for |t| <= 1/3, 0 for |t| >= 2/3, monotone between."""
    t_arr = np.abs(np.asarray(t, dtype=float))
    hi = _phi(CHI0_HI - t_arr)
    lo = _phi(t_arr - CHI0_LO)
    with np.errstate(invalid="ignore"):
        out = np.where(hi + lo > 0.0, hi / np.where(hi + lo > 0.0, hi + lo, 1.0), 0.0)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CutoffFunction:
    """Descriptor of the compact-support cutoff in use."""

    plateau: float = CHI0_LO
    support: float = CHI0_HI

    def __call__(self, t: np.ndarray | float) -> np.ndarray | float:
        return chi0(t)


CHI0 = CutoffFunction()


# ---------------------------------------------------------------------------
# momentum-space building blocks
# ---------------------------------------------------------------------------


def spatial_momenta(geom: HoneycombGeometry) -> np.ndarray:
    """Cartesian momenta of the (m1, m2) grid, shape (L, L, 2)."""
    m = np.arange(geom.L)
    a1, a2 = np.meshgrid(m, m, indexing="ij")
    k = np.empty((geom.L, geom.L, 2))
    k[..., 0] = (a1 * G1[0] + a2 * G2[0]) / geom.L
    k[..., 1] = (a1 * G1[1] + a2 * G2[1]) / geom.L
    return k


def reduce_to_shortest(kvecs: np.ndarray) -> np.ndarray:
    """Shortest representative of each momentum modulo the reciprocal lattice."""
    flat = kvecs.reshape(-1, 2)
    best = flat.copy()
    best_norm = np.sum(best**2, axis=1)
    for n1 in range(-2, 3):
        for n2 in range(-2, 3):
            shift = flat - (n1 * G1 + n2 * G2)
            norm = np.sum(shift**2, axis=1)
            better = norm < best_norm - 1e-14
            best[better] = shift[better]
            best_norm[better] = norm[better]
    return best.reshape(kvecs.shape)


def omega_on_grid(geom: HoneycombGeometry) -> np.ndarray:
    k = spatial_momenta(geom)
    return (2.0 / 3.0) * (1.0 + 2.0 * np.exp(-1.5j * k[..., 0]) * np.cos(SQRT3 * k[..., 1] / 2.0))


def f_uv_weight(geom: HoneycombGeometry, k0: np.ndarray) -> np.ndarray:
    """1 - sum_omega chi0(|(k0, k - pF)|), shape (F, L, L)."""
    k = spatial_momenta(geom)
    out = np.ones((len(k0), geom.L, geom.L))
    for om in (1, -1):
        d = reduce_to_shortest(k - fermi_point(om))
        d2 = np.sum(d**2, axis=-1)
        norm = np.sqrt(k0[:, None, None] ** 2 + d2[None, :, :])
        out -= chi0(norm)
    return out


def uv_step_weight(h: int, M: int, k0: np.ndarray) -> np.ndarray:
    """H_h(k0): single-scale frequency slice of the UV cutoff."""
    if not 1 <= h <= M:
        raise ScaleOutOfRange(f"UV scale h={h} outside [1, {M}]")
    if h == 1:
        return chi0(np.abs(k0) / 2.0)
    return chi0(2.0 ** (-h) * np.abs(k0)) - chi0(2.0 ** (-h + 1) * np.abs(k0))


def ir_min_scale(beta: float) -> int:
    """Smallest IR scale with nonempty support: floor(log2(3 pi / (4 beta)))."""
    return math.floor(math.log2(3.0 * math.pi / (4.0 * beta)))


def ir_step_weight(h: int, beta: float, kprime_norm: np.ndarray) -> np.ndarray:
    """f_h(k') = chi0(2^-h |k'|) - chi0(2^-h+1 |k'|) for h_beta <= h <= 0."""
    if h > 0 or h < ir_min_scale(beta):
        raise ScaleOutOfRange(f"IR scale h={h} outside [{ir_min_scale(beta)}, 0]")
    return chi0(2.0 ** (-h) * kprime_norm) - chi0(2.0 ** (-h + 1) * kprime_norm)


# ---------------------------------------------------------------------------
# propagator descriptors and momentum tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IRDressing:
    """Wave-function, velocity and mass-like dressings of an IR propagator.

    zeta and v are real scalars; s_fn / t_fn, when given, are called with the
    frequency array (F,) and the two reduced spatial components (L, L) and
    must broadcast to (F, L, L).
    """

    zeta: float = 1.0
    v: float | None = None
    s_fn: Callable[..., np.ndarray] | None = None
    t_fn: Callable[..., np.ndarray] | None = None


@dataclass(frozen=True)
class ScalePropagator:
    """Descriptor of one propagator table.

    regime 'cutoff': full UV-cutoff propagator at scale M.
    regime 'uv':     single UV scale h in [1, M] (includes the f_uv factor).
    regime 'ir':     single IR scale h in [h_beta, 0] for valley omega.
    """

    regime: str
    geom: HoneycombGeometry
    grid: MatsubaraGrid
    h: int | None = None
    omega: int | None = None
    dressing: IRDressing | None = None

    def __post_init__(self) -> None:
        if self.regime not in ("cutoff", "uv", "ir"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "uv" and not (self.h is not None and 1 <= self.h <= self.grid.M):
            raise ScaleOutOfRange(f"UV scale h={self.h} outside [1, {self.grid.M}]")
        if self.regime == "ir":
            if self.omega not in (1, -1):
                raise ValueError("IR propagator needs omega in {+1, -1}")
            hb = ir_min_scale(self.grid.beta)
            if self.h is None or not hb <= self.h <= 0:
                raise ScaleOutOfRange(f"IR scale h={self.h} outside [{hb}, 0]")


def _inverse_2x2(a11, a12, a21, a22):
    det = a11 * a22 - a12 * a21
    inv = np.empty(np.broadcast(a11, a12).shape + (2, 2), dtype=complex)
    inv[..., 0, 0] = a22 / det
    inv[..., 0, 1] = -a12 / det
    inv[..., 1, 0] = -a21 / det
    inv[..., 1, 1] = a11 / det
    return inv, det


def _band_denominator(geom: HoneycombGeometry, k0: np.ndarray) -> np.ndarray:
    om = omega_on_grid(geom)
    return k0[:, None, None] ** 2 + (geom.v0 * np.abs(om)[None, :, :]) ** 2


@dataclass
class PropagatorTable:
    """Momentum-space values w(k) * matrix(k) plus synthesis metadata."""

    prop: ScalePropagator
    k0: np.ndarray             # (F,)
    weight: np.ndarray         # (F, L, L) scalar cutoff weight
    matrix: np.ndarray         # (F, L, L, 2, 2) propagator before weighting
    det: np.ndarray            # (F, L, L) determinant of the inverse's source
    cell_phase: np.ndarray     # (L, L) extra e^{i pF x} phase for IR valleys

    @property
    def weighted(self) -> np.ndarray:
        return self.weight[..., None, None] * self.matrix


def ir_matrix_blocks(
    geom: HoneycombGeometry,
    k0: np.ndarray,
    kred: np.ndarray,
    omega: int,
    dressing: IRDressing | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Entries of the (possibly dressed) quadratic form A_{h,omega}(k').

    Returns broadcastable (a11, a12, a21, a22) with shapes (F, L, L).
    """
    d = dressing or IRDressing()
    v = geom.v0 if d.v is None else d.v
    k1p = kred[..., 0]
    k2p = kred[..., 1]
    pf = fermi_point(omega)
    om_shift = (2.0 / 3.0) * (
        1.0 + 2.0 * np.exp(-1.5j * (k1p + pf[0])) * np.cos(SQRT3 * (k2p + pf[1]) / 2.0)
    )
    lin = 1j * k1p - omega * k2p
    # free remainders: s0 = 0, t0 = -v0 Omega*(k'+pF) - v0 (i k1' - omega k2')
    t_free = -geom.v0 * np.conj(om_shift) - geom.v0 * lin
    s_val = d.s_fn(k0, k1p, k2p) if d.s_fn is not None else 0.0
    t_val = d.t_fn(k0, k1p, k2p) if d.t_fn is not None else t_free
    diag = -1j * d.zeta * k0[:, None, None] + s_val
    a12 = v * lin + t_val
    a21 = v * np.conj(lin) + np.conj(t_val)
    a11 = diag * np.ones_like(k1p)[None, :, :]
    return a11, a12, a21, np.copy(a11)


def build_table(prop: ScalePropagator) -> PropagatorTable:
    geom, grid = prop.geom, prop.grid
    k0_all = grid.frequencies
    L = geom.L
    if prop.regime in ("cutoff", "uv"):
        if prop.regime == "uv":
            # single-scale slices keep only the frequencies H_h can reach
            keep = uv_step_weight(prop.h, grid.M, k0_all) > 1e-300
            k0 = k0_all[keep]
        else:
            k0 = k0_all
        om = omega_on_grid(geom)
        h_k = -geom.v0 * np.stack(
            [
                np.stack([np.zeros_like(om), np.conj(om)], axis=-1),
                np.stack([om, np.zeros_like(om)], axis=-1),
            ],
            axis=-2,
        )
        ik0 = 1j * k0[:, None, None]
        mat, det = _inverse_2x2(
            h_k[None, :, :, 0, 0] - ik0,
            h_k[None, :, :, 0, 1] * np.ones_like(ik0),
            h_k[None, :, :, 1, 0] * np.ones_like(ik0),
            h_k[None, :, :, 1, 1] - ik0,
        )
        if prop.regime == "cutoff":
            w = np.broadcast_to(
                chi0(2.0 ** (-grid.M) * np.abs(k0))[:, None, None], (len(k0), L, L)
            ).copy()
        else:
            w = f_uv_weight(geom, k0) * uv_step_weight(prop.h, grid.M, k0)[:, None, None]
        return PropagatorTable(
            prop=prop, k0=k0, weight=w, matrix=mat, det=det, cell_phase=np.ones((L, L), dtype=complex)
        )
    # IR valley table: the support needs |k0| < (2/3) 2^h, mask frequencies first
    keep = np.abs(k0_all) < CHI0_HI * 2.0**prop.h
    k0 = k0_all[keep]
    kred = reduce_to_shortest(spatial_momenta(geom) - fermi_point(prop.omega))
    if len(k0) == 0:
        k0 = k0_all[:0]
        empty = np.zeros((0, L, L))
        return PropagatorTable(
            prop=prop,
            k0=k0,
            weight=empty,
            matrix=np.zeros((0, L, L, 2, 2), dtype=complex),
            det=empty.astype(complex),
            cell_phase=np.ones((L, L), dtype=complex),
        )
    norm = np.sqrt(k0[:, None, None] ** 2 + np.sum(kred**2, axis=-1)[None, :, :])
    w = ir_step_weight(prop.h, grid.beta, norm)
    a11, a12, a21, a22 = ir_matrix_blocks(geom, k0, kred, prop.omega, prop.dressing)
    mat, det = _inverse_2x2(a11, a12, a21, a22)
    # e^{-i k' x} = e^{-i k x} e^{+i pF x}: spatial DFT plus a cell phase
    n = np.arange(L)
    n1, n2 = np.meshgrid(n, n, indexing="ij")
    cells = n1[..., None] * L1VEC + n2[..., None] * L2VEC
    pf = fermi_point(prop.omega)
    phase = np.exp(1j * (cells[..., 0] * pf[0] + cells[..., 1] * pf[1]))
    return PropagatorTable(prop=prop, k0=k0, weight=w, matrix=mat, det=det, cell_phase=phase)


_TABLE_CACHE: dict[tuple, PropagatorTable] = {}


def table_for(prop: ScalePropagator) -> PropagatorTable:
    key = None
    if prop.dressing is None:
        key = (prop.regime, prop.geom.L, prop.geom.t, prop.grid.beta, prop.grid.M, prop.h, prop.omega)
        if key in _TABLE_CACHE:
            return _TABLE_CACHE[key]
    table = build_table(prop)
    if key is not None:
        _TABLE_CACHE[key] = table
    return table


# ---------------------------------------------------------------------------
# exact position-space synthesis
# ---------------------------------------------------------------------------


def position_table(prop: ScalePropagator, x0s: np.ndarray) -> np.ndarray:
    """g(x) on x0s x all cells, shape (n_x0, L, L, 2, 2); exact finite sum."""
    t = table_for(prop)
    beta = prop.grid.beta
    # spatial DFT: sum_m e^{-2 pi i (m.n)/L} S[m]
    spatial = np.fft.fft2(t.weighted, axes=(1, 2))
    spatial *= t.cell_phase[None, :, :, None, None]
    phases = np.exp(-1j * np.outer(np.asarray(x0s, dtype=float), t.k0))
    out = np.tensordot(phases, spatial, axes=(1, 0))
    return out / (beta * prop.geom.n_cells)


def _check_domain(beta: float, x: tuple) -> tuple[float, int, int]:
    x0, n1, n2 = x
    if not (-beta / 2.0 < x0 <= beta / 2.0):
        raise ValueError(f"x0={x0} outside (-beta/2, beta/2]")
    return float(x0), int(n1), int(n2)


def cutoff_propagator(geom: HoneycombGeometry, grid: MatsubaraGrid, x: tuple) -> np.ndarray:
    """Full frequency-cutoff propagator g(x) at x = (x0, n1, n2)."""
    x0, n1, n2 = _check_domain(grid.beta, x)
    prop = ScalePropagator("cutoff", geom, grid)
    return position_table(prop, np.array([x0]))[0, n1 % geom.L, n2 % geom.L]


def uv_scale_propagator(
    geom: HoneycombGeometry, grid: MatsubaraGrid, h: int, x: tuple
) -> np.ndarray:
    """Single UV scale g^(h)(x); h must lie in [1, M]."""
    x0, n1, n2 = _check_domain(grid.beta, x)
    prop = ScalePropagator("uv", geom, grid, h=h)
    return position_table(prop, np.array([x0]))[0, n1 % geom.L, n2 % geom.L]


def ir_scale_propagator(
    geom: HoneycombGeometry,
    grid: MatsubaraGrid,
    h: int,
    omega: int,
    x: tuple,
    dressing: IRDressing | None = None,
) -> np.ndarray:
    """Single IR scale valley propagator g^(h)_omega(x); h in [h_beta, 0]."""
    x0, n1, n2 = _check_domain(grid.beta, x)
    prop = ScalePropagator("ir", geom, grid, h=h, omega=omega, dressing=dressing)
    return position_table(prop, np.array([x0]))[0, n1 % geom.L, n2 % geom.L]


# ---------------------------------------------------------------------------
# Gram factorization
# ---------------------------------------------------------------------------


@dataclass
class GramFactor:
    """Vectors A_{x,rho}, B_{x,rho} with <A_{x,rho}, B_{y,rho'}> = g_{rho rho'}(x-y).

    Half-vectors carry sqrt(weight); the A side takes the quarter power of the
    (positive) determinant scale, the B side the three-quarter power times the
    numerator matrix, so both sides have equal, x-independent norms.
    """

    prop: ScalePropagator
    k0: np.ndarray              # (n_active,)
    kvec: np.ndarray            # (n_active, 2) cartesian spatial momenta
    sqrt_w: np.ndarray          # (n_active,)
    scale_quarter: np.ndarray   # (n_active,) |det|^(1/4)
    numerator: np.ndarray       # (n_active, 2, 2) adjugate-style numerator
    norm_inv: float             # (beta |Lambda|)^(-1/2)

    def vector_a(self, x: tuple[float, int, int], rho: int) -> np.ndarray:
        x0, n1, n2 = x
        pos = n1 * L1VEC + n2 * L2VEC
        phase = np.exp(1j * (self.k0 * x0 + self.kvec @ pos))
        base = self.norm_inv * phase * self.sqrt_w / self.scale_quarter
        out = np.zeros((len(self.k0), 2), dtype=complex)
        out[:, rho] = base
        return out.ravel()

    def vector_b(self, x: tuple[float, int, int], rho: int) -> np.ndarray:
        x0, n1, n2 = x
        pos = n1 * L1VEC + n2 * L2VEC
        phase = np.exp(1j * (self.k0 * x0 + self.kvec @ pos))
        base = self.norm_inv * phase * self.sqrt_w / self.scale_quarter**3
        return (base[:, None] * self.numerator[:, :, rho]).ravel()

    def norm_a(self) -> float:
        return float(np.linalg.norm(self.norm_inv * self.sqrt_w / self.scale_quarter))

    def norm_b(self, rho: int) -> float:
        col = self.norm_inv * self.sqrt_w[:, None] / self.scale_quarter[:, None] ** 3 * self.numerator[:, :, rho]
        return float(np.linalg.norm(col))

    def entry(self, x: tuple, rho: int, y: tuple, rho_p: int) -> complex:
        return complex(np.vdot(self.vector_a(x, rho), self.vector_b(y, rho_p)))


def gram_factorize(prop: ScalePropagator) -> GramFactor:
    """Factor a propagator table into Gram half-vectors.

    Requires the determinant of the quadratic form to be real and negative on
    the active momentum set (true for every supported dressing).
    """
    t = table_for(prop)
    geom, grid = prop.geom, prop.grid
    active = t.weight > 1e-300
    n_act = int(np.count_nonzero(active))
    if n_act == 0:
        raise ValueError("propagator has empty momentum support")
    f_idx, m1_idx, m2_idx = np.nonzero(active)
    k0 = t.k0[f_idx]
    if prop.regime == "ir":
        kred = reduce_to_shortest(spatial_momenta(geom) - fermi_point(prop.omega))
        kvec = kred[m1_idx, m2_idx]
    else:
        kvec = spatial_momenta(geom)[m1_idx, m2_idx]
    det = t.det[f_idx, m1_idx, m2_idx]
    if np.any(np.abs(det.imag) > 1e-10 * np.abs(det)) or np.any(det.real >= 0):
        raise ValueError("quadratic form determinant is not real negative; cannot factor")
    scale = np.abs(det)
    # numerator N with N / |det| = matrix: N = matrix * |det|
    numer = t.matrix[f_idx, m1_idx, m2_idx] * scale[:, None, None]
    return GramFactor(
        prop=prop,
        k0=k0,
        kvec=kvec,
        sqrt_w=np.sqrt(t.weight[f_idx, m1_idx, m2_idx]),
        scale_quarter=scale**0.25,
        numerator=numer,
        norm_inv=1.0 / math.sqrt(grid.beta * geom.n_cells),
    )


# ---------------------------------------------------------------------------
# decay reports and norms
# ---------------------------------------------------------------------------


def _x0_samples(beta: float, finest_scale: float, n_uniform: int = 128) -> np.ndarray:
    uniform = (np.arange(n_uniform) + 0.5) / n_uniform * beta - beta / 2.0
    dyadic = beta * 2.0 ** (-np.arange(1, 40, dtype=float))
    dyadic = dyadic[dyadic > 0.25 * finest_scale]
    pts = np.concatenate([uniform, dyadic, -dyadic, [beta / 2.0]])
    pts = pts[(pts > -beta / 2.0) & (pts <= beta / 2.0)]
    return np.unique(pts)


def torus_cell_distance(geom: HoneycombGeometry) -> np.ndarray:
    """Cartesian distance of each cell to the origin on the periodic torus."""
    L = geom.L
    n = np.arange(L)
    n1, n2 = np.meshgrid(n, n, indexing="ij")
    best = np.full((L, L), np.inf)
    for i1 in (-1, 0, 1):
        for i2 in (-1, 0, 1):
            vec = (n1 + i1 * L)[..., None] * L1VEC + (n2 + i2 * L)[..., None] * L2VEC
            best = np.minimum(best, np.linalg.norm(vec, axis=-1))
    return best


def decay_bound_report(
    geom: HoneycombGeometry,
    grid: MatsubaraGrid,
    h_range: list[int],
    K_list: list[int],
    regime: str = "uv",
    omega: int = 1,
    dressing: IRDressing | None = None,
) -> list[dict]:
    """Empirical decay constants sup_x |g^(h)(x)| (1 + dist^K) / prefactor.

    UV rows use dist = 2^h |x0|_beta + |x|_Lambda with prefactor 1; IR rows
    use dist = 2^h (|x0|_beta + |x|_Lambda) with prefactor 2^(2h).
    """
    beta = grid.beta
    cell_dist = torus_cell_distance(geom)
    rows: list[dict] = []
    for h in h_range:
        if regime == "uv":
            prop = ScalePropagator("uv", geom, grid, h=h)
            finest = 2.0 ** (-h)
            pref = 1.0
        else:
            prop = ScalePropagator("ir", geom, grid, h=h, omega=omega, dressing=dressing)
            finest = beta
            pref = 2.0 ** (2 * h)
        x0s = _x0_samples(beta, finest)
        table = position_table(prop, x0s)
        absval = np.max(np.abs(table), axis=(-2, -1))  # (n_x0, L, L)
        x0_per = np.minimum(np.abs(x0s), beta - np.abs(x0s))
        if regime == "uv":
            dist = (2.0**h) * x0_per[:, None, None] + cell_dist[None, :, :]
        else:
            dist = (2.0**h) * (x0_per[:, None, None] + cell_dist[None, :, :])
        for K in K_list:
            c_k = float(np.max(absval * (1.0 + dist**K))) / pref
            rows.append(
                {
                    "h": h,
                    "K": K,
                    "regime": regime,
                    "constant": c_k,
                    "sup_abs": float(np.max(absval)),
                }
            )
    return rows


def propagator_norms(geom: HoneycombGeometry, beta: float, M: int, n_x0: int = 4096) -> dict:
    """Sup and L1 norms of the full cutoff propagator.

    The L1 integral uses a trapezoidal x0 grid dense on the 2^-M frequency
    structure, so it is quadrature-affected and only used for growth fits.
    """
    grid = MatsubaraGrid(beta=beta, M=M)
    prop = ScalePropagator("cutoff", geom, grid)
    x0s = (np.arange(n_x0) + 0.5) / n_x0 * beta - beta / 2.0
    table = position_table(prop, x0s)
    entrymax = np.max(np.abs(table), axis=(-2, -1))
    sup = float(np.max(entrymax))
    dense = _x0_samples(beta, 2.0 ** (-M), n_uniform=n_x0)
    fine = position_table(prop, dense)
    sup = max(sup, float(np.max(np.abs(fine))))
    l1 = float(np.sum(entrymax) * beta / n_x0)
    return {"sup": sup, "l1": l1, "M": M, "beta": beta}
