"""Pairing (diagram) expansion of moments and cumulants of the quartic coupling.

A graph at order N consists of N four-leg vertices, each carrying a spacetime
label and a sublattice index, with one outgoing (minus) and one incoming (plus)
half-line per spin.  A pairing is a pair of permutations (up, down): the minus
half-line of vertex v with spin s joins the plus half-line of vertex perm_s[v].
The sign is the permutation parity of the pairing, computed as chord-crossing
parity times the per-line orientation factors, which reproduces the Wick sign
of the underlying word exactly.

Values are momentum sums with exact conservation at every vertex (frequencies
add as integers, spatial indices add mod L); no time quadrature anywhere.  The
order-2 vacuum value is also available in closed convolution form, usable at
frequency counts far beyond the brute enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial
from typing import Iterable, Iterator

import numpy as np

from .cutoffs_propagators import ScalePropagator, table_for
from .honeycomb import HoneycombGeometry, MatsubaraGrid

MAX_BRUTE_ASSIGNMENTS = 50_000_000


@dataclass(frozen=True)
class GraphElement:
    """Interaction vertex: spacetime slot with a sublattice index to be summed."""

    vertex_id: int

    # half-line positions inside the word (+up, -up, +down, -down) per vertex
    def position(self, spin: int, eps: int) -> int:
        return 4 * self.vertex_id + 2 * spin + (0 if eps > 0 else 1)


@dataclass(frozen=True)
class FeynmanGraph:
    """Pairing of half-lines: per-spin permutations v -> target of v's minus line."""

    n: int
    perm_up: tuple[int, ...]
    perm_down: tuple[int, ...]

    @cached_property
    def lines(self) -> tuple[tuple[int, int, int], ...]:
        """(source vertex, target vertex, spin) for every line; spin 0 = up."""
        up = tuple((v, self.perm_up[v], 0) for v in range(self.n))
        down = tuple((v, self.perm_down[v], 1) for v in range(self.n))
        return up + down

    @cached_property
    def sign(self) -> int:
        """Wick sign of this pairing of the word prod_v (+up -up +down -down)_v."""
        chords = []
        orient = 1
        for v, w, spin in self.lines:
            p_minus = GraphElement(v).position(spin, -1)
            p_plus = GraphElement(w).position(spin, +1)
            if p_minus > p_plus:
                orient = -orient
            chords.append((min(p_minus, p_plus), max(p_minus, p_plus)))
        crossings = 0
        for (a1, b1), (a2, b2) in itertools.combinations(chords, 2):
            if a1 < a2 < b1 < b2 or a2 < a1 < b2 < b1:
                crossings += 1
        return orient * (-1 if crossings & 1 else 1)

    @cached_property
    def is_connected(self) -> bool:
        adj = [set() for _ in range(self.n)]
        for v, w, _ in self.lines:
            adj[v].add(w)
            adj[w].add(v)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n

    def relabeled(self, tau: tuple[int, ...]) -> "FeynmanGraph":
        """Conjugate the pairing by a vertex relabeling tau (new id of old v)."""
        inv = [0] * self.n
        for old, new in enumerate(tau):
            inv[new] = old
        up = tuple(tau[self.perm_up[inv[v]]] for v in range(self.n))
        down = tuple(tau[self.perm_down[inv[v]]] for v in range(self.n))
        return FeynmanGraph(self.n, up, down)


def enumerate_pairings(N: int) -> Iterator[FeynmanGraph]:
    """All (N!)^2 pairings, streamed; nothing is materialized."""
    if N < 1:
        raise ValueError("need N >= 1 interaction vertices")
    base = tuple(range(N))
    for up in itertools.permutations(base):
        for down in itertools.permutations(base):
            yield FeynmanGraph(N, up, down)


def connected_only(graphs: Iterable[FeynmanGraph]) -> Iterator[FeynmanGraph]:
    return (g for g in graphs if g.is_connected)


def count_all_pairings(N: int) -> int:
    return factorial(N) ** 2


def count_connected_pairings(N: int) -> int:
    """Connected count by exponential-formula recursion on (n!)^2 totals."""
    totals = [factorial(n) ** 2 for n in range(N + 1)]
    connected = [0] * (N + 1)
    for n in range(1, N + 1):
        c = totals[n]
        for k in range(1, n):
            c -= comb(n - 1, k - 1) * connected[k] * totals[n - k]
        connected[n] = c
    return connected[N]


# ---------------------------------------------------------------------------
# Valuation


def physical_ghat(geom: HoneycombGeometry, grid: MatsubaraGrid) -> np.ndarray:
    """Cutoff propagator on the full retained grid, shape (F, L, L, 2, 2)."""
    table = table_for(ScalePropagator("cutoff", geom, grid))
    return table.weighted


def graph_value(
    graph: FeynmanGraph,
    ghat: np.ndarray,
    geom: HoneycombGeometry,
    grid: MatsubaraGrid,
    U: float = 1.0,
) -> complex:
    """sigma_Gamma U^N (beta |Lambda|)^{-N} sum over conserving line momenta.

    Brute enumeration over all line-momentum assignments with exact
    conservation at every vertex; intended for desk-scale universes.
    """
    N = graph.n
    L = geom.L
    F = grid.n_freq
    n_mom = F * L * L
    n_lines = 2 * N
    if n_mom**n_lines > MAX_BRUTE_ASSIGNMENTS:
        raise ValueError(
            f"{n_mom}^{n_lines} line-momentum assignments exceed brute-force limit"
        )
    # momentum index -> (frequency integer, spatial indices)
    n_int = np.repeat(grid.n_indices, L * L)
    m1 = np.tile(np.repeat(np.arange(L), L), F)
    m2 = np.tile(np.arange(L), F * L)

    assign = np.indices((n_mom,) * n_lines).reshape(n_lines, -1)
    ok = np.ones(assign.shape[1], dtype=bool)
    for v in range(N):
        leaving = [i for i, (a, _, _) in enumerate(graph.lines) if a == v]
        entering = [i for i, (_, b, _) in enumerate(graph.lines) if b == v]
        ok &= (
            n_int[assign[leaving]].sum(axis=0) == n_int[assign[entering]].sum(axis=0)
        )
        ok &= (m1[assign[leaving]].sum(axis=0) - m1[assign[entering]].sum(axis=0)) % L == 0
        ok &= (m2[assign[leaving]].sum(axis=0) - m2[assign[entering]].sum(axis=0)) % L == 0
    assign = assign[:, ok]
    flat = ghat.reshape(n_mom, 2, 2)
    total = 0j
    for rhos in itertools.product((0, 1), repeat=N):
        prod = np.ones(assign.shape[1], dtype=complex)
        for i, (v, w, _) in enumerate(graph.lines):
            prod *= flat[assign[i], rhos[v], rhos[w]]
        total += prod.sum()
    scale = (grid.beta * geom.n_cells) ** N
    return graph.sign * (U**N) * total / scale


def moment_sum(
    N: int, ghat: np.ndarray, geom: HoneycombGeometry, grid: MatsubaraGrid, U: float = 1.0
) -> complex:
    """Sum over all pairings: equals E(V^N)."""
    total = 0j
    for g in enumerate_pairings(N):
        total += graph_value(g, ghat, geom, grid, U)
    return total


def connected_sum(
    N: int, ghat: np.ndarray, geom: HoneycombGeometry, grid: MatsubaraGrid, U: float = 1.0
) -> complex:
    """Sum over connected pairings: equals the truncated expectation E^T(V;N)."""
    total = 0j
    for g in connected_only(enumerate_pairings(N)):
        total += graph_value(g, ghat, geom, grid, U)
    return total


# ---------------------------------------------------------------------------
# Closed-form order-2 vacuum value (beyond brute-force frequency counts)


def _pair_selfconvolution(entry: np.ndarray, L: int) -> np.ndarray:
    """B(q) = sum_{k + k' = q} a(k) a(k'): linear in frequency, circular in space."""
    F = entry.shape[0]
    space_hat = np.fft.fft2(entry, axes=(1, 2))
    out_hat = np.empty((2 * F - 1, L, L), dtype=complex)
    for i in range(L):
        for j in range(L):
            out_hat[:, i, j] = np.convolve(space_hat[:, i, j], space_hat[:, i, j])
    # pointwise square in the transform domain is the mod-L convolution
    return np.fft.ifft2(out_hat, axes=(1, 2))


def order2_connected_value(
    ghat: np.ndarray, geom: HoneycombGeometry, grid: MatsubaraGrid, U: float = 1.0
) -> complex:
    """E^T(V;2) for a propagator with vanishing equal-point diagonal.

    The only surviving connected pairing exchanges both spin lines between the
    two vertices (sign +1); its value reduces to a frequency convolution
    contracted at coinciding total momentum:
        U^2 (beta|Lambda|)^{-2} sum_q sum_{r r'} B_{r r'}(q) B_{r' r}(q),
    with B the per-entry self-convolution of ghat.
    """
    L = geom.L
    B = np.empty((2 * grid.n_freq - 1, L, L, 2, 2), dtype=complex)
    for r in range(2):
        for rp in range(2):
            B[..., r, rp] = _pair_selfconvolution(ghat[..., r, rp], L)
    total = 0j
    for r in range(2):
        for rp in range(2):
            total += np.sum(B[..., r, rp] * B[..., rp, r])
    scale = (grid.beta * geom.n_cells) ** 2
    return (U**2) * complex(total) / scale


def perturbative_coefficients_diagrams(
    geom: HoneycombGeometry, grid: MatsubaraGrid
) -> tuple[float, float]:
    """(c1, c2): coefficients of U and U^2 in the interacting free energy f^(M).

    f^(M) = F_0 - (beta|Lambda|)^{-1} sum_N ((-1)^N / N!) E^T(V;N), V linear
    in U.  c1 is the tadpole square (identically zero at half filling), c2 the
    closed-form convolution value.
    """
    ghat = physical_ghat(geom, grid)
    vol = grid.beta * geom.n_cells
    equal_point = ghat.sum(axis=(0, 1, 2)) / vol
    c1 = float(sum(equal_point[r, r] ** 2 for r in range(2)).real)
    et2 = order2_connected_value(ghat, geom, grid, U=1.0)
    c2 = -et2.real / (2.0 * vol)
    return c1, c2


def richardson_order2(values: dict[int, float]) -> float:
    """Two-stage Richardson in q = 2^{-M} from c2 at M in {M0, M0+2, M0+4}."""
    ms = sorted(values)
    if len(ms) != 3 or ms[1] - ms[0] != 2 or ms[2] - ms[1] != 2:
        raise ValueError("need three M values spaced by 2")
    c6, c8, c10 = (values[m] for m in ms)
    t1_hi = (4.0 * c10 - c8) / 3.0
    t1_lo = (4.0 * c8 - c6) / 3.0
    return (16.0 * t1_hi - t1_lo) / 15.0


# ---------------------------------------------------------------------------
# The pessimistic factorial bound


def naive_bound(
    N: int,
    g_inf: float,
    g_1: float,
    U: float = 1.0,
    count_connected: int | None = None,
) -> dict[str, float]:
    """Spanning-tree-factored bound on |F^{(M;N)}| and its factorial envelope.

    Each connected graph is bounded by integrating N-1 spanning-tree lines in
    the l1 norm and the remaining N+1 lines in sup; the sublattice sums give
    2^N.  'tree_factored' multiplies by the connected count / N!;
    'per_graph' is the single-graph bound.
    """
    if N < 1:
        raise ValueError("need N >= 1")
    count = count_connected_pairings(N) if count_connected is None else count_connected
    per_graph = (2.0 * abs(U)) ** N * g_inf ** (N + 1) * g_1 ** (N - 1)
    return {
        "per_graph": per_graph,
        "tree_factored": count * per_graph / factorial(N),
        "count_connected": float(count),
    }


def factorial_envelope(N: int, M: int, beta: float, C: float, U: float = 1.0) -> float:
    """(2 C^3 |U|)^N N! M^{N+1} beta^{N-1}: the N!-carrying growth envelope."""
    return (2.0 * C**3 * abs(U)) ** N * factorial(N) * float(M) ** (N + 1) * beta ** (N - 1)
