"""Exact finite Grassmann algebra over an ordered generator set.

Generators come in (minus, plus) pairs attached to modes; a mode is a momentum
label (frequency, spatial indices, spin, sublattice) or an abstract index.  The
global order is: mode ``m`` owns generator ``2m`` (minus) and ``2m + 1`` (plus),
and modes are ordered lexicographically by their labels.  Polynomials are sparse
maps from generator bitmasks to complex coefficients; the product sign is the
transposition parity of merging two ascending words.

Gaussian states are defined by a covariance matrix ``C[m, p] = E(psi^-_m
psi^+_p)``; all other pairings vanish.  ``gaussian_expectation`` implements the
Wick pairing recursion (the definition), ``expectation_via_determinant`` the
equivalent minus/plus block determinant with the parity prefactor, vectorized
over monomial batches.  Truncated expectations are cumulants, computed by
Moebius inversion over set partitions; ``truncated_expectation_logderiv`` is an
independent route through the multilinear coefficient of the formal logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .config import MAX_CLUSTERS, MAX_EXACT_GENERATORS
from .cutoffs_propagators import ScalePropagator, table_for
from .errors import UniverseMismatch, UniverseTooLarge
from .honeycomb import HoneycombGeometry, MatsubaraGrid


class MomentumMode(NamedTuple):
    """Momentum-space mode label: Matsubara index, spatial indices, spin, orbital."""

    n0: int
    m1: int
    m2: int
    sigma: int
    rho: int


@dataclass(frozen=True)
class Universe:
    """Ordered generator set shared by all polynomials in one computation.

    ``labels[m]`` describes mode ``m``; generator ``2m`` is the minus field,
    ``2m + 1`` the plus field.  ``token`` is the hashable identity used for
    compatibility checks.
    """

    kind: str
    labels: tuple
    token: tuple

    @property
    def n_modes(self) -> int:
        return len(self.labels)

    @property
    def n_gen(self) -> int:
        return 2 * len(self.labels)

    def minus_gen(self, mode: int) -> int:
        return 2 * mode

    def plus_gen(self, mode: int) -> int:
        return 2 * mode + 1

    @staticmethod
    def abstract(n_modes: int) -> "Universe":
        labels = tuple(range(n_modes))
        return Universe(kind="abstract", labels=labels, token=("abstract", n_modes))


def momentum_universe(geom: HoneycombGeometry, grid: MatsubaraGrid) -> Universe:
    """All retained momentum modes, ordered by (n0, m1, m2, sigma, rho)."""
    labels = tuple(
        MomentumMode(int(n0), m1, m2, sigma, rho)
        for n0 in grid.n_indices
        for m1 in range(geom.L)
        for m2 in range(geom.L)
        for sigma in (0, 1)
        for rho in (0, 1)
    )
    token = ("momentum", geom.L, geom.t, grid.beta, grid.M)
    return Universe(kind="momentum", labels=labels, token=token)


def momentum_mode_index(universe: Universe, grid: MatsubaraGrid, label: MomentumMode) -> int:
    """Invert the (n0, m1, m2, sigma, rho) -> mode enumeration in O(1)."""
    L = int(round((universe.n_modes / (4 * grid.n_freq)) ** 0.5))
    f = label.n0 - int(grid.n_indices[0])
    return (((f * L + label.m1) * L + label.m2) * 2 + label.sigma) * 2 + label.rho


def _check_universe(a: Universe, b: Universe) -> None:
    if a.token != b.token:
        raise UniverseMismatch(f"incompatible universes {a.token} vs {b.token}")


def _merge_sign(a: int, b: int) -> int:
    # parity of moving each generator of b past the higher generators of a
    swaps = 0
    bb = b
    while bb:
        j = (bb & -bb).bit_length() - 1
        swaps += (a >> (j + 1)).bit_count()
        bb &= bb - 1
    return -1 if swaps & 1 else 1


def _bits(mask: int) -> Iterable[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class GrassmannPoly:
    """Sparse Grassmann polynomial: dict of generator-bitmask -> coefficient."""

    __slots__ = ("universe", "terms")

    def __init__(self, universe: Universe, terms: dict[int, complex] | None = None):
        self.universe = universe
        self.terms = {m: c for m, c in (terms or {}).items() if c != 0}

    @staticmethod
    def zero(universe: Universe) -> "GrassmannPoly":
        return GrassmannPoly(universe)

    @staticmethod
    def one(universe: Universe) -> "GrassmannPoly":
        return GrassmannPoly(universe, {0: 1.0 + 0j})

    @staticmethod
    def monomial(universe: Universe, gens: Sequence[int], coeff: complex = 1.0) -> "GrassmannPoly":
        """Product of the given generators in the written order, times coeff."""
        mask = 0
        sign = 1
        for g in gens:
            bit = 1 << g
            if mask & bit:
                return GrassmannPoly.zero(universe)
            sign *= _merge_sign(mask, bit)
            mask |= bit
        return GrassmannPoly(universe, {mask: sign * complex(coeff)})

    @property
    def constant(self) -> complex:
        return self.terms.get(0, 0j)

    def is_even(self) -> bool:
        return all(m.bit_count() % 2 == 0 for m in self.terms)

    def max_degree(self) -> int:
        return max((m.bit_count() for m in self.terms), default=0)

    def coeff_norm(self) -> float:
        return sum(abs(c) for c in self.terms.values())

    def __add__(self, other: "GrassmannPoly") -> "GrassmannPoly":
        _check_universe(self.universe, other.universe)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0j) + c
        return GrassmannPoly(self.universe, out)

    def __sub__(self, other: "GrassmannPoly") -> "GrassmannPoly":
        return self + other.scale(-1.0)

    def scale(self, s: complex) -> "GrassmannPoly":
        return GrassmannPoly(self.universe, {m: s * c for m, c in self.terms.items()})

    def __mul__(self, other: "GrassmannPoly") -> "GrassmannPoly":
        _check_universe(self.universe, other.universe)
        out: dict[int, complex] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                if ma & mb:
                    continue
                m = ma | mb
                out[m] = out.get(m, 0j) + ca * cb * _merge_sign(ma, mb)
        return GrassmannPoly(self.universe, out)

    def power(self, k: int) -> "GrassmannPoly":
        acc = GrassmannPoly.one(self.universe)
        for _ in range(k):
            acc = acc * self
        return acc

    def map_coeffs(self, fn: Callable[[complex], complex]) -> "GrassmannPoly":
        return GrassmannPoly(self.universe, {m: fn(c) for m, c in self.terms.items()})

    def isclose(self, other: "GrassmannPoly", tol: float = 1e-12) -> bool:
        _check_universe(self.universe, other.universe)
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(m, 0j) - other.terms.get(m, 0j)) <= tol for m in keys)


@dataclass(frozen=True)
class Covariance:
    """Gaussian pairing E(psi^-_m psi^+_p) = matrix[m, p]; every other pairing is 0."""

    universe: Universe
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.universe.n_modes
        if self.matrix.shape != (n, n):
            raise ValueError(f"covariance shape {self.matrix.shape} != ({n}, {n})")

    def pair(self, minus_gen: int, plus_gen: int) -> complex:
        if minus_gen % 2 != 0 or plus_gen % 2 != 1:
            return 0j
        return complex(self.matrix[minus_gen // 2, plus_gen // 2])

    @staticmethod
    def from_pairs(universe: Universe, pairs: dict[tuple[int, int], complex]) -> "Covariance":
        n = universe.n_modes
        mat = np.zeros((n, n), dtype=complex)
        for (gm, gp), val in pairs.items():
            if gm % 2 != 0 or gp % 2 != 1:
                raise ValueError("pairs must map (minus-generator, plus-generator)")
            mat[gm // 2, gp // 2] = val
        return Covariance(universe, mat)


def covariance_from_ghat(
    universe: Universe, geom: HoneycombGeometry, grid: MatsubaraGrid, ghat: np.ndarray
) -> Covariance:
    """Covariance from an arbitrary momentum-diagonal propagator array (F, L, L, 2, 2)."""
    n = universe.n_modes
    mat = np.zeros((n, n), dtype=complex)
    scale = grid.beta * geom.n_cells
    for f in range(grid.n_freq):
        for m1 in range(geom.L):
            for m2 in range(geom.L):
                for sigma in (0, 1):
                    base = (((f * geom.L + m1) * geom.L + m2) * 2 + sigma) * 2
                    mat[base : base + 2, base : base + 2] = scale * ghat[f, m1, m2]
    return Covariance(universe, mat)


def momentum_covariance(prop: ScalePropagator, universe: Universe) -> Covariance:
    """Covariance of the scale measure: E = beta*|Lambda| * delta_{k k'} delta_{s s'} g_hat(k).

    Modes sharing (n0, m1, m2, sigma) couple through the 2x2 sublattice block of
    the weighted propagator; everything else is zero.
    """
    geom, grid = prop.geom, prop.grid
    table = table_for(prop)
    n = universe.n_modes
    mat = np.zeros((n, n), dtype=complex)
    scale = grid.beta * geom.n_cells
    freq_index = {float(k0): i for i, k0 in enumerate(grid.frequencies)}
    for row, k0 in enumerate(table.k0):
        f = freq_index[float(k0)]
        block = table.weighted[row]
        for m1 in range(geom.L):
            for m2 in range(geom.L):
                for sigma in (0, 1):
                    base = (((f * geom.L + m1) * geom.L + m2) * 2 + sigma) * 2
                    for rho in (0, 1):
                        for rho_p in (0, 1):
                            mat[base + rho, base + rho_p] = scale * block[m1, m2, rho, rho_p]
    return Covariance(universe, mat)


# ---------------------------------------------------------------------------
# Gaussian expectations


def _word(mask: int) -> tuple[tuple[int, int], ...]:
    # written order of a monomial: (eps, mode) pairs with eps 0 = minus, 1 = plus
    return tuple((g & 1, g >> 1) for g in _bits(mask))


def _wick_monomial(mask: int, cov: Covariance) -> complex:
    """Pairing-sum recursion: E(x1...xn) = sum_j (-1)^{gap} P(x1, xj) E(rest)."""
    word = _word(mask)
    n = len(word)
    if n % 2:
        return 0j
    C = cov.matrix
    memo: dict[int, complex] = {0: 1.0 + 0j}

    def pair(a: tuple[int, int], b: tuple[int, int]) -> complex:
        if a[0] == b[0]:
            return 0j
        if a[0] == 0:
            return complex(C[a[1], b[1]])
        return -complex(C[b[1], a[1]])

    def rec(remaining: int) -> complex:
        if remaining in memo:
            return memo[remaining]
        i = (remaining & -remaining).bit_length() - 1
        rest = remaining & ~(1 << i)
        total = 0j
        sign = 1
        for j in _bits(rest):
            p = pair(word[i], word[j])
            if p != 0:
                total += sign * p * rec(rest & ~(1 << j))
            sign = -sign
        memo[remaining] = total
        return total

    return rec((1 << n) - 1)


def gaussian_expectation(X: GrassmannPoly, cov: Covariance) -> complex:
    """Normalized Gaussian expectation by the Wick pairing rule."""
    _check_universe(X.universe, cov.universe)
    return sum((c * _wick_monomial(m, cov) for m, c in X.terms.items()), 0j)


def _block_data(mask: int) -> tuple[tuple[int, ...], tuple[int, ...], int] | None:
    """Minus/plus mode lists in written order plus the block-sort parity sign.

    Returns None for unbalanced monomials (expectation 0).  The sign combines
    the parity of sorting the word into (minus block)(plus block) with the
    (-1)^{r(r-1)/2} from contracting the blocks, so that the expectation is
    sign * det(C[minus, plus]).
    """
    minus: list[int] = []
    plus: list[int] = []
    inversions = 0
    for g in _bits(mask):
        if g & 1:
            plus.append(g >> 1)
        else:
            inversions += len(plus)
            minus.append(g >> 1)
    if len(minus) != len(plus):
        return None
    r = len(minus)
    inversions += r * (r - 1) // 2
    return tuple(minus), tuple(plus), (-1 if inversions & 1 else 1)


def expectation_via_determinant(X: GrassmannPoly, cov: Covariance) -> complex:
    """Same functional as gaussian_expectation, via batched block determinants."""
    _check_universe(X.universe, cov.universe)
    C = cov.matrix
    total = X.terms.get(0, 0j)
    groups: dict[int, tuple[list[complex], list[tuple[int, ...]], list[tuple[int, ...]]]] = {}
    for mask, coeff in X.terms.items():
        if mask == 0:
            continue
        data = _block_data(mask)
        if data is None:
            continue
        minus, plus, sign = data
        coeffs, rows, cols = groups.setdefault(len(minus), ([], [], []))
        coeffs.append(sign * coeff)
        rows.append(minus)
        cols.append(plus)
    for r, (coeffs, rows, cols) in groups.items():
        ri = np.asarray(rows)
        ci = np.asarray(cols)
        mats = C[ri[:, :, None], ci[:, None, :]]
        dets = np.linalg.det(mats) if r > 1 else mats[:, 0, 0]
        total += complex(np.dot(np.asarray(coeffs), dets))
    return total


# ---------------------------------------------------------------------------
# Partial (spectator-field) Gaussian integration: e^{Delta_C}


def _left_derivative(terms: dict[int, complex], gen: int) -> dict[int, complex]:
    bit = 1 << gen
    out: dict[int, complex] = {}
    below = bit - 1
    for mask, coeff in terms.items():
        if not mask & bit:
            continue
        sign = -1 if (mask & below).bit_count() & 1 else 1
        out[mask & ~bit] = sign * coeff
    return out


def _laplacian(X: GrassmannPoly, cov: Covariance) -> GrassmannPoly:
    """Delta_C X = sum_{m,p} C[m,p] d/d(psi^+_p) d/d(psi^-_m) X."""
    C = cov.matrix
    out: dict[int, complex] = {}
    for mask, coeff in X.terms.items():
        for gm in _bits(mask):
            if gm & 1:
                continue
            m = gm >> 1
            sign1 = -1 if (mask & ((1 << gm) - 1)).bit_count() & 1 else 1
            reduced = mask & ~(1 << gm)
            for gp in _bits(reduced):
                if not gp & 1:
                    continue
                p = gp >> 1
                c = C[m, p]
                if c == 0:
                    continue
                sign2 = -1 if (reduced & ((1 << gp) - 1)).bit_count() & 1 else 1
                key = reduced & ~(1 << gp)
                out[key] = out.get(key, 0j) + sign1 * sign2 * c * coeff
    return GrassmannPoly(X.universe, out)


def partial_gaussian_expectation(X: GrassmannPoly, cov: Covariance) -> GrassmannPoly:
    """Integrate out the covariance field: E_eta X(phi + eta) = (e^{Delta_C} X)(phi).

    The full expectation is the constant term of the result when cov covers all
    pairings; with a single-scale covariance the surviving generators play the
    role of the yet-unintegrated field.
    """
    _check_universe(X.universe, cov.universe)
    acc = X
    cur = X
    k = 0
    while cur.terms:
        k += 1
        cur = _laplacian(cur, cov).scale(1.0 / k)
        if not cur.terms:
            break
        acc = acc + cur
    return acc


# ---------------------------------------------------------------------------
# Truncated expectations (cumulants)


@lru_cache(maxsize=None)
def _set_partitions(elems: frozenset) -> tuple[tuple[frozenset, ...], ...]:
    if not elems:
        return ((),)
    first = min(elems)
    rest = elems - {first}
    out: list[tuple[frozenset, ...]] = []
    rest_list = sorted(rest)
    for bits in range(1 << len(rest_list)):
        block = frozenset({first} | {rest_list[i] for i in range(len(rest_list)) if bits >> i & 1})
        for sub in _set_partitions(elems - block):
            out.append((block,) + sub)
    return tuple(out)


def _subset_moments(
    V_list: Sequence[GrassmannPoly],
    cov: Covariance,
    expect: Callable[[GrassmannPoly, Covariance], complex],
) -> dict[frozenset, complex]:
    products: dict[frozenset, GrassmannPoly] = {}

    def product(S: frozenset) -> GrassmannPoly:
        if S not in products:
            idx = sorted(S)
            acc = V_list[idx[0]]
            for i in idx[1:]:
                acc = acc * V_list[i]
            products[S] = acc
        return products[S]

    n = len(V_list)
    moments = {frozenset(): 1.0 + 0j}
    for bits in range(1, 1 << n):
        S = frozenset(i for i in range(n) if bits >> i & 1)
        moments[S] = expect(product(S), cov)
    return moments


def _require_even(V_list: Sequence[GrassmannPoly]) -> None:
    for i, V in enumerate(V_list):
        if not V.is_even():
            raise ValueError(f"truncated expectation requires even polynomials; V[{i}] is odd")


def truncated_expectation(
    V_list: Sequence[GrassmannPoly],
    cov: Covariance,
    expect: Callable[[GrassmannPoly, Covariance], complex] = expectation_via_determinant,
) -> complex:
    """Joint cumulant E^T(V_1, ..., V_n) by Moebius inversion over set partitions.

    All V_i must be even (so block products are order-independent).  Capped at
    n <= MAX_CLUSTERS; higher orders go through the determinant expansion.
    """
    n = len(V_list)
    if n < 1:
        raise ValueError("need at least one polynomial")
    if n > MAX_CLUSTERS:
        raise ValueError(f"cumulant order {n} exceeds cap {MAX_CLUSTERS}")
    _require_even(V_list)
    for V in V_list:
        _check_universe(V.universe, cov.universe)
    if n == 1:
        return expect(V_list[0], cov)
    moments = _subset_moments(V_list, cov, expect)
    total = 0j
    for partition in _set_partitions(frozenset(range(n))):
        k = len(partition)
        weight = (-1) ** (k - 1) * factorial(k - 1)
        prod = 1.0 + 0j
        for block in partition:
            prod *= moments[block]
        total += weight * prod
    return total


def truncated_expectation_power(V: GrassmannPoly, n: int, cov: Covariance) -> complex:
    """E^T(V; n): the n-th cumulant of a single interaction."""
    return truncated_expectation([V] * n, cov)


def truncated_expectation_logderiv(
    V_list: Sequence[GrassmannPoly],
    cov: Covariance,
    expect: Callable[[GrassmannPoly, Covariance], complex] = expectation_via_determinant,
) -> complex:
    """Independent cumulant route: multilinear coefficient of log E(prod(1 + l_i V_i)).

    The generating function is a polynomial in nilpotent bookkeeping variables
    l_i; the formal logarithm truncates at order n and the full-set coefficient
    is the joint cumulant.
    """
    n = len(V_list)
    if n < 1:
        raise ValueError("need at least one polynomial")
    _require_even(V_list)
    moments = _subset_moments(V_list, cov, expect)
    full = frozenset(range(n))
    # A = M - 1 on nonempty subsets; log(1 + A) = sum (-1)^{k+1} A^k / k
    A = {S: m for S, m in moments.items() if S}
    power = dict(A)
    total = A.get(full, 0j)
    for k in range(2, n + 1):
        nxt: dict[frozenset, complex] = {}
        for S, c in power.items():
            for T, d in A.items():
                if S & T:
                    continue
                key = S | T
                nxt[key] = nxt.get(key, 0j) + c * d
        power = nxt
        total += (-1) ** (k + 1) / k * power.get(full, 0j)
    return total


def partial_truncated_expectation(
    V_list: Sequence[GrassmannPoly],
    cov: Covariance,
) -> GrassmannPoly:
    """Cumulant with spectator fields: Moebius formula with e^{Delta_C} block moments.

    Returns a polynomial in the unintegrated generators.  Valid for even V_i;
    block moments are even, so their products commute and the commutative
    cumulant formula applies verbatim.
    """
    n = len(V_list)
    if n < 1:
        raise ValueError("need at least one polynomial")
    if n > MAX_CLUSTERS:
        raise ValueError(f"cumulant order {n} exceeds cap {MAX_CLUSTERS}")
    _require_even(V_list)
    for V in V_list:
        _check_universe(V.universe, cov.universe)
    universe = cov.universe
    block_moment: dict[frozenset, GrassmannPoly] = {}

    def moment(S: frozenset) -> GrassmannPoly:
        if S not in block_moment:
            idx = sorted(S)
            acc = V_list[idx[0]]
            for i in idx[1:]:
                acc = acc * V_list[i]
            block_moment[S] = partial_gaussian_expectation(acc, cov)
        return block_moment[S]

    total = GrassmannPoly.zero(universe)
    for partition in _set_partitions(frozenset(range(n))):
        k = len(partition)
        weight = (-1) ** (k - 1) * factorial(k - 1)
        prod = GrassmannPoly.one(universe)
        for block in partition:
            prod = prod * moment(block)
        total = total + prod.scale(weight)
    return total


# ---------------------------------------------------------------------------
# The Hubbard interaction and the exact partition function


def conserving_triples(grid: MatsubaraGrid, L: int) -> list[tuple]:
    """Momentum-conserving (k_plus_up, k_minus_up, k_plus_down) triples.

    The fourth momentum is fixed by conservation: exactly on the frequency
    axis (no wrapping) and mod the reciprocal lattice spatially.  Triples whose
    fourth frequency falls outside the retained grid are dropped.
    """
    n_lo = int(grid.n_indices[0])
    n_hi = int(grid.n_indices[-1])
    out = []
    freqs = [int(n) for n in grid.n_indices]
    cells = [(m1, m2) for m1 in range(L) for m2 in range(L)]
    for n1 in freqs:
        for n2 in freqs:
            for n3 in freqs:
                n4 = n1 + n3 - n2
                if n4 < n_lo or n4 > n_hi:
                    continue
                for c1 in cells:
                    for c2 in cells:
                        for c3 in cells:
                            c4 = ((c1[0] + c3[0] - c2[0]) % L, (c1[1] + c3[1] - c2[1]) % L)
                            out.append(((n1, c1), (n2, c2), (n3, c3), (n4, c4)))
    return out


def interaction(geom: HoneycombGeometry, grid: MatsubaraGrid, U: float) -> GrassmannPoly:
    """Quartic on-site coupling, U sum_rho int dx psi+up psi-up psi+down psi-down,
    expanded over momentum generators with exact conservation."""
    universe = momentum_universe(geom, grid)
    if U == 0:
        return GrassmannPoly.zero(universe)
    pref = complex(U) / (grid.beta * geom.n_cells) ** 3
    n_lo = int(grid.n_indices[0])
    L = geom.L

    def mode(n0: int, cell: tuple[int, int], sigma: int, rho: int) -> int:
        f = n0 - n_lo
        return (((f * L + cell[0]) * L + cell[1]) * 2 + sigma) * 2 + rho

    terms: dict[int, complex] = {}
    for (n1, c1), (n2, c2), (n3, c3), (n4, c4) in conserving_triples(grid, L):
        for rho in (0, 1):
            gens = (
                universe.plus_gen(mode(n1, c1, 0, rho)),
                universe.minus_gen(mode(n2, c2, 0, rho)),
                universe.plus_gen(mode(n3, c3, 1, rho)),
                universe.minus_gen(mode(n4, c4, 1, rho)),
            )
            mask = 0
            sign = 1
            for g in gens:
                bit = 1 << g
                sign *= _merge_sign(mask, bit)
                mask |= bit
            terms[mask] = terms.get(mask, 0j) + sign * pref
    return GrassmannPoly(universe, terms)


def exponential(V: GrassmannPoly) -> GrassmannPoly:
    """e^V in the algebra; terminates since V has no constant term."""
    if V.constant != 0:
        raise ValueError("exponential expects a polynomial with zero constant term")
    acc = GrassmannPoly.one(V.universe)
    cur = GrassmannPoly.one(V.universe)
    k = 0
    while cur.terms:
        k += 1
        cur = (cur * V).scale(1.0 / k)
        acc = acc + cur
    return acc


def partition_function_exact(geom: HoneycombGeometry, grid: MatsubaraGrid, U: float) -> complex:
    """Xi = E(e^{-V}) relative to the normalized cutoff Gaussian measure.

    Exact: the exponential terminates at order n_gen/4.  Guarded by the exact
    generator limit since the determinant batch walks every monomial.
    """
    universe = momentum_universe(geom, grid)
    if universe.n_gen > MAX_EXACT_GENERATORS:
        raise UniverseTooLarge(
            f"{universe.n_gen} generators exceed exact limit {MAX_EXACT_GENERATORS}"
        )
    V = interaction(geom, grid, U)
    if not V.terms:
        return 1.0 + 0j
    prop = ScalePropagator(regime="cutoff", geom=geom, grid=grid)
    cov = momentum_covariance(prop, universe)
    return expectation_via_determinant(exponential(V.scale(-1.0)), cov)
