"""Grassmann algebra arithmetic, Gaussian/truncated expectations, interaction, exact Xi."""

import numpy as np
import pytest

from fermicrg.config import rel_close
from fermicrg.errors import UniverseMismatch, UniverseTooLarge
from fermicrg.grassmann_engine import (
    Covariance,
    GrassmannPoly,
    MomentumMode,
    Universe,
    conserving_triples,
    expectation_via_determinant,
    exponential,
    gaussian_expectation,
    interaction,
    momentum_covariance,
    momentum_mode_index,
    momentum_universe,
    partial_gaussian_expectation,
    partial_truncated_expectation,
    partition_function_exact,
    truncated_expectation,
    truncated_expectation_logderiv,
    truncated_expectation_power,
)
from fermicrg.cutoffs_propagators import ScalePropagator
from fermicrg.honeycomb import HoneycombGeometry, MatsubaraGrid


def _random_covariance(rng, universe, scale=0.7):
    n = universe.n_modes
    mat = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return Covariance(universe, mat)


def _random_balanced_word(rng, universe, r):
    """Generator indices of a balanced monomial, in a random written order."""
    minus = rng.choice(universe.n_modes, size=r, replace=False)
    plus = rng.choice(universe.n_modes, size=r, replace=False)
    gens = [2 * int(m) for m in minus] + [2 * int(p) + 1 for p in plus]
    rng.shuffle(gens)
    return gens


def _random_even_poly(rng, universe, n_terms=8, max_r=2):
    poly = GrassmannPoly.zero(universe)
    for _ in range(n_terms):
        r = int(rng.integers(1, max_r + 1))
        gens = _random_balanced_word(rng, universe, r)
        coeff = complex(rng.standard_normal(), rng.standard_normal())
        poly = poly + GrassmannPoly.monomial(universe, gens, coeff)
    return poly


def _explicit_det_expectation(word_gens, cov):
    """Reference value: signed minus/plus block determinant of the written word."""
    minus = [(pos, g >> 1) for pos, g in enumerate(word_gens) if g % 2 == 0]
    plus = [(pos, g >> 1) for pos, g in enumerate(word_gens) if g % 2 == 1]
    if len(minus) != len(plus):
        return 0j
    perm = [p for p, _ in minus] + [p for p, _ in plus]
    inv = sum(
        1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j]
    )
    r = len(minus)
    sign = (-1) ** (inv + r * (r - 1) // 2)
    sub = cov.matrix[np.ix_([m for _, m in minus], [p for _, p in plus])]
    val = sub[0, 0] if r == 1 else np.linalg.det(sub)
    return sign * complex(val)


class TestAlgebra:
    def test_nilpotency(self):
        u = Universe.abstract(3)
        psi1 = GrassmannPoly.monomial(u, [2])
        assert (psi1 * psi1).terms == {}

    def test_anticommutation(self):
        u = Universe.abstract(3)
        psi1 = GrassmannPoly.monomial(u, [1])
        psi2 = GrassmannPoly.monomial(u, [2])
        lhs = psi1 * psi2
        rhs = (psi2 * psi1).scale(-1.0)
        assert lhs.isclose(rhs, tol=0)

    def test_disjoint_supports_commute(self):
        u = Universe.abstract(4)
        a = GrassmannPoly.one(u) + GrassmannPoly.monomial(u, [0, 1])
        b = GrassmannPoly.one(u) + GrassmannPoly.monomial(u, [2, 3])
        prod = a * b
        expected = (
            GrassmannPoly.one(u)
            + GrassmannPoly.monomial(u, [0, 1])
            + GrassmannPoly.monomial(u, [2, 3])
            + GrassmannPoly.monomial(u, [0, 1, 2, 3])
        )
        assert prod.isclose(expected, tol=0)
        assert prod.isclose(b * a, tol=0)

    def test_written_order_sign(self):
        u = Universe.abstract(2)
        swapped = GrassmannPoly.monomial(u, [2, 1])
        sorted_ = GrassmannPoly.monomial(u, [1, 2])
        assert swapped.isclose(sorted_.scale(-1.0), tol=0)

    def test_associativity_random(self):
        rng = np.random.default_rng(7)
        u = Universe.abstract(4)
        for _ in range(20):
            a = _random_even_poly(rng, u, n_terms=5)
            b = _random_even_poly(rng, u, n_terms=5)
            c = _random_even_poly(rng, u, n_terms=5)
            assert ((a * b) * c).isclose(a * (b * c), tol=1e-10)

    def test_universe_mismatch(self):
        a = GrassmannPoly.one(Universe.abstract(2))
        b = GrassmannPoly.one(Universe.abstract(3))
        with pytest.raises(UniverseMismatch):
            _ = a * b


class TestGaussianExpectation:
    def test_single_contraction(self):
        u = Universe.abstract(2)
        rng = np.random.default_rng(3)
        cov = _random_covariance(rng, u)
        X = GrassmannPoly.monomial(u, [u.minus_gen(0), u.plus_gen(1)])
        assert abs(gaussian_expectation(X, cov) - cov.matrix[0, 1]) < 1e-15

    def test_interleaved_two_by_two_is_plus_det(self):
        u = Universe.abstract(2)
        rng = np.random.default_rng(4)
        cov = _random_covariance(rng, u)
        X = GrassmannPoly.monomial(
            u, [u.minus_gen(0), u.plus_gen(0), u.minus_gen(1), u.plus_gen(1)]
        )
        det = np.linalg.det(cov.matrix)
        assert abs(gaussian_expectation(X, cov) - det) < 1e-13

    def test_unbalanced_vanishes(self):
        u = Universe.abstract(3)
        rng = np.random.default_rng(5)
        cov = _random_covariance(rng, u)
        X = GrassmannPoly.monomial(u, [u.minus_gen(0), u.minus_gen(1), u.plus_gen(2)])
        assert gaussian_expectation(X, cov) == 0

    def test_wick_matches_explicit_determinant(self):
        # pairing recursion vs signed block determinant, fresh covariance each draw
        rng = np.random.default_rng(11)
        u = Universe.abstract(9)
        checked = 0
        for _ in range(150):
            r = int(rng.integers(1, 7))
            cov = _random_covariance(rng, u)
            gens = _random_balanced_word(rng, u, r)
            X = GrassmannPoly.monomial(u, gens)
            expected = _explicit_det_expectation(gens, cov)
            got = gaussian_expectation(X, cov)
            assert rel_close(got, expected, 1e-12)
            checked += 1
        assert checked == 150

    def test_wick_matches_det_at_eight_contractions(self):
        rng = np.random.default_rng(13)
        u = Universe.abstract(10)
        for _ in range(3):
            cov = _random_covariance(rng, u)
            gens = _random_balanced_word(rng, u, 8)
            X = GrassmannPoly.monomial(u, gens)
            assert rel_close(
                gaussian_expectation(X, cov), _explicit_det_expectation(gens, cov), 1e-12
            )

    def test_det_route_matches_wick_on_polys(self):
        rng = np.random.default_rng(17)
        u = Universe.abstract(6)
        for _ in range(20):
            cov = _random_covariance(rng, u)
            P = _random_even_poly(rng, u, n_terms=12, max_r=3)
            a = gaussian_expectation(P, cov)
            b = expectation_via_determinant(P, cov)
            assert rel_close(a, b, 1e-12)


class TestPartialIntegration:
    def test_constant_term_is_full_expectation(self):
        rng = np.random.default_rng(19)
        u = Universe.abstract(5)
        for _ in range(10):
            cov = _random_covariance(rng, u)
            P = _random_even_poly(rng, u, n_terms=10, max_r=2)
            out = partial_gaussian_expectation(P, cov)
            assert rel_close(out.constant, gaussian_expectation(P, cov), 1e-11)

    def test_addition_principle(self):
        # integrating out C1 then C2 equals integrating out C1 + C2 in one step
        rng = np.random.default_rng(23)
        u = Universe.abstract(5)
        for _ in range(10):
            c1 = _random_covariance(rng, u, scale=0.5)
            c2 = _random_covariance(rng, u, scale=0.5)
            csum = Covariance(u, c1.matrix + c2.matrix)
            P = _random_even_poly(rng, u, n_terms=8, max_r=2)
            staged = gaussian_expectation(partial_gaussian_expectation(P, c1), c2)
            direct = gaussian_expectation(P, csum)
            assert rel_close(staged, direct, 1e-11)


class TestTruncatedExpectation:
    def test_first_cumulant_is_mean(self):
        rng = np.random.default_rng(29)
        u = Universe.abstract(4)
        cov = _random_covariance(rng, u)
        V = _random_even_poly(rng, u)
        assert truncated_expectation([V], cov) == expectation_via_determinant(V, cov)

    def test_independent_blocks_vanish(self):
        # V1 on modes {0,1}, V2 on modes {2,3}, covariance block-diagonal
        rng = np.random.default_rng(31)
        u = Universe.abstract(4)
        mat = np.zeros((4, 4), dtype=complex)
        mat[:2, :2] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        mat[2:, 2:] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        cov = Covariance(u, mat)
        V1 = GrassmannPoly.monomial(u, [0, 1, 2, 3], 0.8) + GrassmannPoly.monomial(u, [0, 3], 1.1)
        V2 = GrassmannPoly.monomial(u, [4, 5, 6, 7], -0.4) + GrassmannPoly.monomial(u, [4, 7], 0.6)
        assert abs(truncated_expectation([V1, V2], cov)) < 1e-13

    def test_second_cumulant_formula(self):
        rng = np.random.default_rng(37)
        u = Universe.abstract(5)
        for _ in range(8):
            cov = _random_covariance(rng, u)
            V1 = _random_even_poly(rng, u)
            V2 = _random_even_poly(rng, u)
            lhs = truncated_expectation([V1, V2], cov)
            rhs = expectation_via_determinant(V1 * V2, cov) - expectation_via_determinant(
                V1, cov
            ) * expectation_via_determinant(V2, cov)
            assert rel_close(lhs, rhs, 1e-11)

    def test_moments_reconstructed_from_cumulants(self):
        # E(V1 V2 V3 V4) = sum over partitions of products of joint cumulants
        from itertools import combinations

        rng = np.random.default_rng(41)
        u = Universe.abstract(4)
        cov = _random_covariance(rng, u, scale=0.4)
        Vs = [_random_even_poly(rng, u, n_terms=4) for _ in range(4)]

        def partitions(items):
            if not items:
                yield []
                return
            first, rest = items[0], items[1:]
            for k in range(len(rest) + 1):
                for others in combinations(rest, k):
                    block = (first,) + others
                    remaining = [x for x in rest if x not in others]
                    for sub in partitions(remaining):
                        yield [block] + sub

        direct = expectation_via_determinant(Vs[0] * Vs[1] * Vs[2] * Vs[3], cov)
        recon = 0j
        for part in partitions(list(range(4))):
            prod = 1.0 + 0j
            for block in part:
                prod *= truncated_expectation([Vs[i] for i in block], cov)
            recon += prod
        assert rel_close(direct, recon, 1e-10)

    def test_mobius_equals_log_route(self):
        rng = np.random.default_rng(43)
        u = Universe.abstract(5)
        for n in (2, 3, 4):
            for _ in range(4):
                cov = _random_covariance(rng, u, scale=0.5)
                Vs = [_random_even_poly(rng, u, n_terms=5) for _ in range(n)]
                a = truncated_expectation(Vs, cov)
                b = truncated_expectation_logderiv(Vs, cov)
                assert rel_close(a, b, 1e-10)

    def test_order_cap_and_evenness(self):
        rng = np.random.default_rng(47)
        u = Universe.abstract(3)
        cov = _random_covariance(rng, u)
        V = _random_even_poly(rng, u, n_terms=3)
        with pytest.raises(ValueError):
            truncated_expectation([V] * 7, cov)
        odd = GrassmannPoly.monomial(u, [0])
        with pytest.raises(ValueError):
            truncated_expectation([odd, odd], cov)

    def test_partial_truncated_consistency(self):
        # full covariance: result collapses to the scalar cumulant
        rng = np.random.default_rng(53)
        u = Universe.abstract(4)
        cov = _random_covariance(rng, u, scale=0.5)
        V1 = _random_even_poly(rng, u, n_terms=5)
        V2 = _random_even_poly(rng, u, n_terms=5)
        out = partial_truncated_expectation([V1, V2], cov)
        scalar = truncated_expectation([V1, V2], cov)
        assert rel_close(out.constant, scalar, 1e-10)
        # zero covariance: nothing is integrated, second cumulant cancels exactly
        zero = Covariance(u, np.zeros((4, 4), dtype=complex))
        out0 = partial_truncated_expectation([V1, V2], zero)
        assert out0.coeff_norm() < 1e-12
        out1 = partial_truncated_expectation([V1], zero)
        assert out1.isclose(V1, tol=1e-13)


class TestInteraction:
    def test_zero_coupling(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        assert interaction(geom, grid, 0.0).terms == {}

    def test_term_count_matches_brute_force(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        assert grid.n_freq == 2
        V = interaction(geom, grid, 1.3)
        # independent conservation count over all momentum quadruples
        freqs = [int(n) for n in grid.n_indices]
        count = sum(
            1
            for n1 in freqs
            for n2 in freqs
            for n3 in freqs
            for n4 in freqs
            if n1 + n3 == n2 + n4
        )
        assert len(conserving_triples(grid, 1)) == count
        assert len(V.terms) == 2 * count
        assert V.is_even()
        assert V.max_degree() == 4

    def test_hermiticity_under_conjugation(self):
        # antilinear map k -> -k leaves the quartic invariant
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        V = interaction(geom, grid, 0.9)
        u = V.universe
        mapped = GrassmannPoly.zero(u)
        for mask, coeff in V.terms.items():
            gens = []
            m = mask
            while m:
                low = m & -m
                g = low.bit_length() - 1
                m ^= low
                mode = u.labels[g >> 1]
                new_mode = MomentumMode(-mode.n0 - 1, (-mode.m1) % geom.L, (-mode.m2) % geom.L, mode.sigma, mode.rho)
                gens.append(2 * momentum_mode_index(u, grid, new_mode) + (g & 1))
            mapped = mapped + GrassmannPoly.monomial(u, gens, np.conj(coeff))
        assert mapped.isclose(V, tol=1e-14)

    def test_first_order_tadpole_vanishes(self):
        # E(V) = 0 exactly: the equal-point diagonal of the cutoff propagator is zero
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        universe = momentum_universe(geom, grid)
        cov = momentum_covariance(ScalePropagator("cutoff", geom, grid), universe)
        V = interaction(geom, grid, 1.0)
        assert abs(gaussian_expectation(V, cov)) < 1e-12

    def test_covariance_diagonal_in_momentum_and_spin(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        universe = momentum_universe(geom, grid)
        cov = momentum_covariance(ScalePropagator("cutoff", geom, grid), universe)
        for i, lab_i in enumerate(universe.labels):
            for j, lab_j in enumerate(universe.labels):
                same_block = (lab_i.n0, lab_i.m1, lab_i.m2, lab_i.sigma) == (
                    lab_j.n0,
                    lab_j.m1,
                    lab_j.m2,
                    lab_j.sigma,
                )
                if not same_block:
                    assert cov.matrix[i, j] == 0


class TestPartitionFunction:
    def test_free_value_is_one(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        assert partition_function_exact(geom, grid, 0.0) == 1.0 + 0j

    def test_universe_too_large(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=3)
        assert momentum_universe(geom, grid).n_gen == 32
        with pytest.raises(UniverseTooLarge):
            partition_function_exact(geom, grid, 0.5)

    def test_exponential_termination_and_guard(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        V = interaction(geom, grid, 0.7)
        expV = exponential(V.scale(-1.0))
        assert expV.max_degree() <= V.universe.n_gen
        with pytest.raises(ValueError):
            exponential(GrassmannPoly.one(V.universe))

    def test_series_matches_manual_powers(self):
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        universe = momentum_universe(geom, grid)
        cov = momentum_covariance(ScalePropagator("cutoff", geom, grid), universe)
        U = 0.6
        V = interaction(geom, grid, U)
        xi = partition_function_exact(geom, grid, U)
        from math import factorial

        manual = sum(
            (-1) ** k / factorial(k) * expectation_via_determinant(V.power(k), cov)
            for k in range(0, universe.n_gen // 4 + 1)
        )
        assert rel_close(xi, manual, 1e-12)
        assert abs(xi.imag) < 1e-12 * abs(xi)

    def test_log_series_matches_cumulants(self):
        # Xi(U) coefficients: log Xi = sum_N (-1)^N/N! E^T(V;N),
        # checked at N = 1, 2 through exact U-polynomial coefficients
        geom = HoneycombGeometry(L=1)
        grid = MatsubaraGrid(beta=2.0, M=2)
        universe = momentum_universe(geom, grid)
        cov = momentum_covariance(ScalePropagator("cutoff", geom, grid), universe)
        V1 = interaction(geom, grid, 1.0)
        a1 = -expectation_via_determinant(V1, cov)
        a2 = 0.5 * expectation_via_determinant(V1.power(2), cov)
        l1 = a1
        l2 = a2 - 0.5 * a1**2
        assert rel_close(l1, -truncated_expectation_power(V1, 1, cov), 1e-10)
        assert rel_close(l2, 0.5 * truncated_expectation_power(V1, 2, cov), 1e-10)
