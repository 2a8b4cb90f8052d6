"""Anchored-tree determinant expansion of truncated expectations.

Rewrites a joint cumulant of fermionic field monomials ("clusters") as a sum
over spanning trees anchored at the clusters: each tree contributes an
explicit propagator per tree line times an interpolated determinant over the
remaining fields, integrated against a probability measure on the
interpolation parameters.  The payoff over the plain connected-pairing sum is
quantitative: the determinant is bounded without expanding it (Gram-Hadamard),
so per-order magnitudes grow geometrically while pairing counts grow like a
factorial squared.

The overall sign of each tree term is fixed constructively: the sign of
extracting the tree contractions from the concatenated cluster word, times the
determinant parity of the reduced word.  Equality with the Grassmann engine's
cumulants is the defining test of the convention.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .cutoffs_propagators import ScalePropagator, table_for
from .errors import IncompatibleChain, NotGramFactored
from .grassmann_engine import Covariance
from .honeycomb import HoneycombGeometry, MatsubaraGrid

# Tree enumeration is exponential in the cluster count; the workbench only
# ever needs a handful of clusters at desk scale.
MAX_DET_CLUSTERS = 6

# Free-energy evaluation enumerates trees between quartic clusters and sums
# interpolated determinants on a spacetime grid; cubic order is the largest
# the desk budget supports.
MAX_FREE_ENERGY_ORDER = 3


class Field(NamedTuple):
    """One Grassmann field slot inside a cluster."""

    eps: int    # +1 creation side, -1 annihilation side
    spin: int   # 0 up, 1 down
    mode: int   # covariance mode index (minus generator 2m, plus 2m+1)


class FieldLabel(NamedTuple):
    """Position of a field: cluster id (1-based) and index within it."""

    cluster: int
    index: int


@dataclass(frozen=True)
class FieldCluster:
    """Ordered product of fields treated as one block of a joint cumulant."""

    id: int
    fields: tuple[Field, ...]

    @property
    def n_plus(self) -> int:
        return sum(1 for f in self.fields if f.eps > 0)

    @property
    def n_minus(self) -> int:
        return sum(1 for f in self.fields if f.eps < 0)


@dataclass(frozen=True)
class AnchoredTree:
    """Spanning set of minus->plus contractions between clusters.

    ``lines[k] = (minus_label, plus_label)`` pairs an annihilation-side field
    with a creation-side field of equal spin in a different cluster;
    contracting every cluster to a point turns the lines into a tree.
    ``alpha`` is the resolved overall sign of the tree's term.
    """

    lines: tuple[tuple[FieldLabel, FieldLabel], ...]
    alpha: int

    def cluster_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (min(m.cluster, p.cluster), max(m.cluster, p.cluster)) for m, p in self.lines
        )


# ---------------------------------------------------------------------------
# word bookkeeping and signs
# ---------------------------------------------------------------------------


def _validate_clusters(clusters: Sequence[FieldCluster]) -> None:
    if not clusters:
        raise ValueError("need at least one cluster")
    if len(clusters) > MAX_DET_CLUSTERS:
        raise ValueError(f"cluster count {len(clusters)} exceeds cap {MAX_DET_CLUSTERS}")
    for j, cl in enumerate(clusters, start=1):
        if cl.id != j:
            raise ValueError(f"cluster ids must be 1..s in order; got {cl.id} at slot {j}")
        if len(cl.fields) % 2:
            raise ValueError("each cluster must hold an even number of fields")


def _offsets(clusters: Sequence[FieldCluster]) -> list[int]:
    offs = [0]
    for cl in clusters:
        offs.append(offs[-1] + len(cl.fields))
    return offs


def _flat_position(clusters: Sequence[FieldCluster], label: FieldLabel) -> int:
    return _offsets(clusters)[label.cluster - 1] + label.index


def _word_parity(eps_seq: Sequence[int]) -> int:
    """Sign eps with E(word) = eps * det C[minus rows, plus cols], word order."""
    inversions = 0
    plus_seen = 0
    r = 0
    for eps in eps_seq:
        if eps > 0:
            plus_seen += 1
        else:
            inversions += plus_seen
            r += 1
    return -1 if (inversions + r * (r - 1) // 2) % 2 else 1


def _tree_alpha(clusters: Sequence[FieldCluster],
                lines: Sequence[tuple[FieldLabel, FieldLabel]]) -> int:
    """Extraction sign of the tree chords times the reduced-word parity.

    Extracting a fixed set of contractions from a Wick sum factors off a sign
    that depends only on the chord set: crossings among the chords, the count
    of untouched positions under each chord, and each chord's orientation.
    """
    offs = _offsets(clusters)
    word_eps = [f.eps for cl in clusters for f in cl.fields]
    chords = []
    for mlab, plab in lines:
        mpos = offs[mlab.cluster - 1] + mlab.index
        ppos = offs[plab.cluster - 1] + plab.index
        chords.append((min(mpos, ppos), max(mpos, ppos), 1 if mpos < ppos else -1))
    used = {q for lo, hi, _ in chords for q in (lo, hi)}
    sign = 1
    for (lo1, hi1, _), (lo2, hi2, _) in itertools.combinations(chords, 2):
        if lo1 < lo2 < hi1 < hi2 or lo2 < lo1 < hi2 < hi1:
            sign = -sign
    for lo, hi, orient in chords:
        inside = sum(1 for q in range(lo + 1, hi) if q not in used)
        if inside % 2:
            sign = -sign
        sign *= orient
    reduced = [eps for pos, eps in enumerate(word_eps) if pos not in used]
    return sign * _word_parity(reduced)


# ---------------------------------------------------------------------------
# anchored tree enumeration
# ---------------------------------------------------------------------------


def _spanning_tree_shapes(s: int) -> Iterator[tuple[tuple[int, int], ...]]:
    """All labeled trees on vertices 1..s as sorted edge tuples."""
    pairs = list(itertools.combinations(range(1, s + 1), 2))
    for edges in itertools.combinations(pairs, s - 1):
        parent = list(range(s + 1))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        ok = True
        for a, b in edges:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            yield edges


def enumerate_anchored_trees(clusters: Sequence[FieldCluster]) -> Iterator[AnchoredTree]:
    """Stream every anchored tree between the clusters.

    A single cluster yields the empty tree (its term is the plain determinant
    of the cluster's own word).  Lines join an annihilation-side field to a
    creation-side field of the same spin across two clusters; no field is used
    twice.
    """
    _validate_clusters(clusters)
    s = len(clusters)
    if s == 1:
        yield AnchoredTree(lines=(), alpha=_word_parity([f.eps for f in clusters[0].fields]))
        return
    minus: dict[tuple[int, int], list[FieldLabel]] = {}
    plus: dict[tuple[int, int], list[FieldLabel]] = {}
    for cl in clusters:
        for idx, f in enumerate(cl.fields):
            side = minus if f.eps < 0 else plus
            side.setdefault((cl.id, f.spin), []).append(FieldLabel(cl.id, idx))
    for shape in _spanning_tree_shapes(s):
        options: list[list[tuple[FieldLabel, FieldLabel]]] = []
        for a, b in shape:
            opts = []
            for sigma in (0, 1):
                for src, dst in ((a, b), (b, a)):
                    for mlab in minus.get((src, sigma), ()):
                        for plab in plus.get((dst, sigma), ()):
                            opts.append((mlab, plab))
            options.append(opts)
        for combo in itertools.product(*options):
            labels = [lab for line in combo for lab in line]
            if len(set(labels)) < 2 * (s - 1):
                continue
            lines = tuple(combo)
            yield AnchoredTree(lines=lines, alpha=_tree_alpha(clusters, lines))


def anchored_tree_count(clusters: Sequence[FieldCluster]) -> int:
    return sum(1 for _ in enumerate_anchored_trees(clusters))


# ---------------------------------------------------------------------------
# subset chains and the interpolation measure
# ---------------------------------------------------------------------------


def compatible_chains(tree: AnchoredTree, s: int) -> Iterator[tuple[int, ...]]:
    """Join orders of the clusters compatible with the tree.

    A chain grows from cluster 1 one cluster at a time; compatibility means
    each newcomer is hooked to the current set by exactly one tree line, so
    every initial segment spans a subtree.
    """
    if s == 1:
        yield (1,)
        return
    adjacency: dict[int, set[int]] = {j: set() for j in range(1, s + 1)}
    for a, b in tree.cluster_edges():
        adjacency[a].add(b)
        adjacency[b].add(a)

    def grow(order: list[int], members: set[int]) -> Iterator[tuple[int, ...]]:
        if len(order) == s:
            yield tuple(order)
            return
        frontier = sorted(
            {j for m in members for j in adjacency[m]} - members
        )
        for j in frontier:
            order.append(j)
            members.add(j)
            yield from grow(order, members)
            members.remove(j)
            order.pop()

    yield from grow([1], {1})


def _boundary_counts(edges: Sequence[tuple[int, int]], chain: Sequence[int]) -> tuple[int, ...]:
    """b_k = number of tree lines crossing the k-th nested subset boundary."""
    step = {cluster: k for k, cluster in enumerate(chain, start=1)}
    s = len(chain)
    b = [0] * (s - 1)
    for a, bb in edges:
        lo, hi = sorted((step[a], step[bb]))
        for k in range(lo, hi):
            b[k - 1] += 1
    return tuple(b)


@dataclass(frozen=True)
class InterpolationMeasure:
    """One chain's contribution to the tree's interpolation measure.

    ``chain`` lists cluster ids in join order; the density on [0,1]^{s-1} is
    the monomial prod_k t_k^{exponents[k]} and ``integral`` is its exact
    value, so summing ``integral`` over all chains of a tree gives 1.
    """

    chain: tuple[int, ...]
    exponents: tuple[int, ...]

    @property
    def integral(self) -> Fraction:
        out = Fraction(1)
        for e in self.exponents:
            out /= e + 1
        return out

    def weight(self, tvals: Sequence[float]) -> float:
        out = 1.0
        for e, t in zip(self.exponents, tvals):
            out *= t ** e
        return out

    def t_matrix(self, tvals: Sequence[float]) -> np.ndarray:
        """Interpolation factors t_{j,j'} indexed by 0-based cluster id."""
        s = len(self.chain)
        step = {cluster: k for k, cluster in enumerate(self.chain, start=1)}
        out = np.ones((s, s))
        for a in range(1, s + 1):
            for b in range(1, s + 1):
                lo, hi = sorted((step[a], step[b]))
                prod = 1.0
                for k in range(lo, hi):
                    prod *= tvals[k - 1]
                out[a - 1, b - 1] = prod
        return out

    def unit_vectors(self, tvals: Sequence[float]) -> np.ndarray:
        """Rows u_j (0-based cluster id) with u_j . u_j' = t_{j,j'}."""
        s = len(self.chain)
        u = np.zeros((s, s))
        u[0, 0] = 1.0
        for k in range(1, s):
            t = float(tvals[k - 1])
            u[k] = t * u[k - 1]
            u[k, k] = math.sqrt(max(0.0, 1.0 - t * t))
        out = np.zeros((s, s))
        for k, cluster in enumerate(self.chain):
            out[cluster - 1] = u[k]
        return out


def _normalize_chain(subset_chain: Sequence, s: int) -> tuple[int, ...]:
    items = list(subset_chain)
    if items and isinstance(items[0], (int, np.integer)):
        order = tuple(int(j) for j in items)
        if sorted(order) != list(range(1, s + 1)):
            raise IncompatibleChain(f"chain {order} is not an order of clusters 1..{s}")
        return order
    sets = [frozenset(x) for x in items]
    if len(sets) != s or any(len(x) != k for k, x in enumerate(sets, start=1)):
        raise IncompatibleChain("subset chain must have sizes 1..s")
    order = []
    prev: frozenset = frozenset()
    for x in sets:
        if not prev < x:
            raise IncompatibleChain("subsets must be strictly nested")
        order.extend(x - prev)
        prev = x
    return tuple(int(j) for j in order)


def interpolation_weight(tree: AnchoredTree, subset_chain: Sequence) -> InterpolationMeasure:
    """Density monomial of one (tree, chain) pair; raises IncompatibleChain.

    Accepts the chain either as nested subsets of cluster ids or directly as
    the join order.
    """
    edges = tree.cluster_edges()
    s = len(tree.lines) + 1
    order = _normalize_chain(subset_chain, s)
    if order[0] != 1:
        raise IncompatibleChain("chains must start at the lowest cluster id")
    adjacency: dict[int, set[int]] = {j: set() for j in range(1, s + 1)}
    edge_count: dict[tuple[int, int], int] = {}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
        edge_count[(a, b)] = edge_count.get((a, b), 0) + 1
    members = {order[0]}
    for j in order[1:]:
        hooks = sum(edge_count.get((min(j, m), max(j, m)), 0) for m in members)
        if hooks != 1:
            raise IncompatibleChain(
                f"cluster {j} joins {members} through {hooks} tree lines (need exactly 1)"
            )
        members.add(j)
    b = _boundary_counts(edges, order)
    return InterpolationMeasure(chain=order, exponents=tuple(bk - 1 for bk in b))


def measures_for_tree(tree: AnchoredTree, s: int) -> tuple[InterpolationMeasure, ...]:
    return tuple(interpolation_weight(tree, chain) for chain in compatible_chains(tree, s))


# ---------------------------------------------------------------------------
# exact quadrature
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _unit_gauss(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0,1], exact through the given degree."""
    n = (degree + 1) // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


# ---------------------------------------------------------------------------
# determinant expansion
# ---------------------------------------------------------------------------


def det_expansion(clusters: Sequence[FieldCluster], cov: Covariance) -> complex:
    """Sum of interpolated tree terms; equals the engine's joint cumulant.

    The covariance must vanish between different spins (true for every
    physical propagator here), since tree lines only join equal spins.
    """
    _validate_clusters(clusters)
    s = len(clusters)
    word = [(f, cl.id) for cl in clusters for f in cl.fields]
    n_minus = sum(1 for f, _ in word if f.eps < 0)
    n_plus = len(word) - n_minus
    if n_minus != n_plus:
        return 0j
    if not word:
        return 1.0 + 0j
    mat = cov.matrix
    total = 0j
    for tree in enumerate_anchored_trees(clusters):
        used = set()
        g_prod = 1.0 + 0j
        for mlab, plab in tree.lines:
            mpos = _flat_position(clusters, mlab)
            ppos = _flat_position(clusters, plab)
            used.update((mpos, ppos))
            g_prod *= mat[word[mpos][0].mode, word[ppos][0].mode]
        if g_prod == 0:
            continue
        rows = [(f, cid) for pos, (f, cid) in enumerate(word)
                if pos not in used and f.eps < 0]
        cols = [(f, cid) for pos, (f, cid) in enumerate(word)
                if pos not in used and f.eps > 0]
        r = len(rows)
        if r == 0:
            # fully contracted by the tree: the determinant is empty
            for measure in measures_for_tree(tree, s):
                total += tree.alpha * g_prod * float(measure.integral)
            continue
        sub = np.empty((r, r), dtype=complex)
        for i, (fm, _) in enumerate(rows):
            for j, (fp, _) in enumerate(cols):
                sub[i, j] = mat[fm.mode, fp.mode] if fm.spin == fp.spin else 0.0
        row_cl = np.array([cid - 1 for _, cid in rows])
        col_cl = np.array([cid - 1 for _, cid in cols])
        acc = 0j
        for measure in measures_for_tree(tree, s):
            axes = [_unit_gauss(e + r) for e in measure.exponents]
            for combo in itertools.product(*(range(len(x)) for x, _ in axes)):
                tvals = [axes[k][0][i] for k, i in enumerate(combo)]
                wgt = measure.weight(tvals)
                for k, i in enumerate(combo):
                    wgt *= axes[k][1][i]
                tm = measure.t_matrix(tvals)
                acc += wgt * np.linalg.det(sub * tm[np.ix_(row_cl, col_cl)])
        total += tree.alpha * g_prod * acc
    return total


# ---------------------------------------------------------------------------
# Gram-Hadamard bound
# ---------------------------------------------------------------------------


def gram_hadamard_bound(matrix: np.ndarray, a_vectors: np.ndarray,
                        b_vectors: np.ndarray) -> float:
    """Row/column-norm bound on |det| for a matrix of inner products.

    ``matrix[i, j]`` must equal ``<a_vectors[i], b_vectors[j]>`` (conjugation
    on the first argument); otherwise NotGramFactored is raised.  Returns
    prod_i |A_i| |B_i| after checking the determinant obeys it.
    """
    matrix = np.asarray(matrix, dtype=complex)
    a = np.atleast_2d(np.asarray(a_vectors, dtype=complex))
    b = np.atleast_2d(np.asarray(b_vectors, dtype=complex))
    n = matrix.shape[0]
    if matrix.shape != (n, n) or a.shape[0] != n or b.shape[0] != n:
        raise NotGramFactored("need n x n matrix with n factor vectors per side")
    recon = np.conj(a) @ b.T
    scale = max(1.0, float(np.abs(matrix).max()))
    if not np.allclose(recon, matrix, rtol=1e-9, atol=1e-9 * scale):
        raise NotGramFactored("matrix entries do not match the inner products")
    norms_a = np.linalg.norm(a, axis=1)
    norms_b = np.linalg.norm(b, axis=1)
    bound = float(np.prod(norms_a * norms_b))
    det = abs(np.linalg.det(matrix))
    if det > bound * (1.0 + 1e-9) + 1e-12:
        raise ValueError(f"determinant {det} exceeds Gram bound {bound}")
    return bound


# ---------------------------------------------------------------------------
# position-space sampling (exact for band-limited imaginary-time products)
# ---------------------------------------------------------------------------


def _sample_count(grid: MatsubaraGrid) -> int:
    # products of <= 4 propagator factors per time variable stay below
    # harmonic 2(F-1); any sample count above that makes the mean exact
    need = max(8, 2 * grid.n_freq)
    return 1 << (need - 1).bit_length()


def _position_samples(geom: HoneycombGeometry, grid: MatsubaraGrid,
                      ghat: np.ndarray, x0s: np.ndarray) -> np.ndarray:
    """Exact g(x) synthesis from a full-grid momentum table, (n_x0, L, L, 2, 2)."""
    spatial = np.fft.fft2(ghat, axes=(1, 2))
    phases = np.exp(-1j * np.outer(np.asarray(x0s, dtype=float), grid.frequencies))
    out = np.tensordot(phases, spatial, axes=(1, 0))
    return out / (grid.beta * geom.n_cells)


def _negate_samples(g: np.ndarray) -> np.ndarray:
    """g(-x) from g(x) on the uniform grid; antiperiodic in the time slot."""
    out = np.empty_like(g)
    out[0] = -g[0]
    out[1:] = g[1:][::-1]
    L = g.shape[1]
    neg = (-np.arange(L)) % L
    return out[:, neg][:, :, neg]


def _flatten_cells(g: np.ndarray) -> np.ndarray:
    """(n0, L, L, 2, 2) -> (n0 * L * L, 2, 2) with cell-major flattening."""
    n0, L = g.shape[0], g.shape[1]
    return g.reshape(n0 * L * L, 2, 2)


def _difference_table(g: np.ndarray) -> np.ndarray:
    """gd[p, q] = g(x_p - x_q) over the flattened spacetime sample grid."""
    n0, L = g.shape[0], g.shape[1]
    i = np.arange(n0)
    raw = i[:, None] - i[None, :] + n0 // 2
    idx0 = raw % n0
    sign0 = np.where((raw < 0) | (raw >= n0), -1.0, 1.0)
    c = np.arange(L)
    dcell = (c[:, None] - c[None, :]) % L
    # broadcast: time index pair (i, j), cell pairs (a, a'), (b, b')
    out = g[idx0[:, None, None, :, None, None],
            dcell[None, :, None, None, :, None],
            dcell[None, None, :, None, None, :]]
    out = out * sign0[:, None, None, :, None, None, None, None]
    P = n0 * L * L
    return out.reshape(P, P, 2, 2)


def _det_stack(m: np.ndarray) -> np.ndarray:
    """Determinant over the trailing two axes for sizes 1..3, else LAPACK."""
    r = m.shape[-1]
    if r == 1:
        return m[..., 0, 0]
    if r == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if r == 3:
        return (
            m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
            - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
            + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
        )
    return np.linalg.det(m)


# ---------------------------------------------------------------------------
# per-order free energy via the determinant expansion
# ---------------------------------------------------------------------------


def _quartic_clusters(n: int) -> list[FieldCluster]:
    """n interaction-shaped clusters: (+ up)(- up)(+ down)(- down) each."""
    clusters = []
    mode = 0
    for j in range(1, n + 1):
        fields = []
        for spin in (0, 1):
            for eps in (1, -1):
                fields.append(Field(eps=eps, spin=spin, mode=mode))
                mode += 1
        clusters.append(FieldCluster(id=j, fields=tuple(fields)))
    return clusters


def free_energy_order_n_bbf(N: int, geom: HoneycombGeometry, grid: MatsubaraGrid,
                            U: float, ghat: np.ndarray | None = None) -> complex:
    """Order-N contribution to the specific free energy via tree expansion.

    Works in position space: clusters sit at sampled spacetime points, tree
    propagators and determinant entries are exact finite Fourier sums, and
    the time integrals reduce to exact means of band-limited products.
    `ghat` overrides the momentum-space covariance (full retained grid,
    shape (F, L, L, 2, 2)); it defaults to the frequency-cutoff propagator.
    """
    if N < 1 or N > MAX_FREE_ENERGY_ORDER:
        raise ValueError(f"supported orders are 1..{MAX_FREE_ENERGY_ORDER}")
    beta = grid.beta
    vol = beta * geom.n_cells
    if ghat is None:
        ghat = table_for(ScalePropagator("cutoff", geom, grid)).weighted
    else:
        ghat = np.asarray(ghat, dtype=complex)
        want = (grid.n_freq, geom.L, geom.L, 2, 2)
        if ghat.shape != want:
            raise ValueError(f"ghat shape {ghat.shape} does not match grid {want}")
    g0 = _position_samples(geom, grid, ghat, np.array([0.0]))[0, 0, 0]
    if N == 1:
        # single cluster: empty tree, 2x2 determinant = product of equal-point
        # diagonal entries (which vanish at half filling)
        et1 = U * vol * sum(g0[rho, rho] ** 2 for rho in (0, 1))
        return -((-1.0) ** 1) * et1 / vol
    n0 = _sample_count(grid)
    x0s = -beta / 2.0 + beta * np.arange(n0) / n0
    g = _position_samples(geom, grid, ghat, x0s)
    P = n0 * geom.L * geom.L
    dt = beta / n0
    clusters = _quartic_clusters(N)
    trees = list(enumerate_anchored_trees(clusters))
    if N == 2:
        gflat = _flatten_cells(g)
        gneg = _flatten_cells(_negate_samples(g))
        pair_tables = {(1, 2): gflat, (2, 1): gneg}
        grid_shape: tuple[int, ...] = (P,)
    else:
        gd = _difference_table(g)
        gflat = _flatten_cells(g)
        gneg = _flatten_cells(_negate_samples(g))
        pair_tables = {
            (1, 3): gflat[:, None], (3, 1): gneg[:, None],
            (2, 3): gflat[None, :], (3, 2): gneg[None, :],
            (1, 2): gd, (2, 1): gd.transpose(1, 0, 2, 3),
        }
        grid_shape = (P, P)

    def entry(fa: Field, ca: int, fb: Field, cb: int, rhos: Sequence[int]) -> np.ndarray | complex:
        # E(psi^-_{a} psi^+_{b}) on the relative-coordinate grid
        if fa.spin != fb.spin:
            return 0j
        ra, rb = rhos[ca - 1], rhos[cb - 1]
        if ca == cb:
            return complex(g0[ra, rb])
        return pair_tables[(ca, cb)][..., ra, rb]

    word = [(f, cl.id) for cl in clusters for f in cl.fields]
    total = 0j
    for tree in trees:
        used = set()
        for mlab, plab in tree.lines:
            used.add(_flat_position(clusters, mlab))
            used.add(_flat_position(clusters, plab))
        rows = [(f, cid) for pos, (f, cid) in enumerate(word)
                if pos not in used and f.eps < 0]
        cols = [(f, cid) for pos, (f, cid) in enumerate(word)
                if pos not in used and f.eps > 0]
        r = len(rows)
        measures = measures_for_tree(tree, N)
        for rhos in itertools.product((0, 1), repeat=N):
            g_prod: np.ndarray | complex = 1.0 + 0j
            for mlab, plab in tree.lines:
                fm = clusters[mlab.cluster - 1].fields[mlab.index]
                fp = clusters[plab.cluster - 1].fields[plab.index]
                g_prod = g_prod * entry(fm, mlab.cluster, fp, plab.cluster, rhos)
            base = np.zeros(grid_shape + (r, r), dtype=complex)
            for i, (fm, ca) in enumerate(rows):
                for j, (fp, cb) in enumerate(cols):
                    base[..., i, j] = entry(fm, ca, fp, cb, rhos)
            row_cl = np.array([cid - 1 for _, cid in rows])
            col_cl = np.array([cid - 1 for _, cid in cols])
            acc = np.zeros(grid_shape, dtype=complex)
            for measure in measures:
                axes = [_unit_gauss(e + r) for e in measure.exponents]
                for combo in itertools.product(*(range(len(x)) for x, _ in axes)):
                    tvals = [axes[k][0][i] for k, i in enumerate(combo)]
                    wgt = measure.weight(tvals)
                    for k, i in enumerate(combo):
                        wgt *= axes[k][1][i]
                    tm = measure.t_matrix(tvals)
                    acc += wgt * _det_stack(base * tm[row_cl[:, None], col_cl[None, :]])
            total += tree.alpha * np.sum(g_prod * acc)
    # each relative coordinate carries one exact time integral and cell sum
    et_n = (U ** N) * vol * total * (dt ** (N - 1))
    return -((-1.0) ** N / math.factorial(N)) * et_n / vol
