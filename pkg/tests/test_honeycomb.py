"""Free theory: dispersion, Fermi points, bands, specific (free) energies."""
import math

import numpy as np
import pytest

from fermicrg.config import TOL_EXACT
from fermicrg.errors import DegenerateFermiPoint, MomentumNotOnGrid
from fermicrg.honeycomb import (
    BZ_AREA,
    D1,
    D2,
    D3,
    G1,
    G2,
    L1VEC,
    L2VEC,
    HoneycombGeometry,
    MatsubaraGrid,
    band_transform,
    dispersion,
    dispersion_cartesian,
    dispersion_grid,
    fermi_point,
    fermi_point_indices,
    fermi_points,
    free_specific_energy,
    free_specific_energy_limit,
    free_specific_free_energy,
    free_specific_free_energy_limit,
    hopping_block,
)


def test_reciprocal_duality():
    for gv, lv, want in ((G1, L1VEC, 2 * math.pi), (G1, L2VEC, 0.0),
                         (G2, L1VEC, 0.0), (G2, L2VEC, 2 * math.pi)):
        assert abs(float(np.dot(gv, lv)) - want) <= TOL_EXACT


def test_neighbour_vectors_sum_to_zero():
    assert np.allclose(D1 + D2 + D3, 0.0, atol=TOL_EXACT)


def test_bz_area_value():
    # |det(G1, G2)| must reproduce the closed form 8 pi^2 / (3 sqrt 3)
    det = abs(G1[0] * G2[1] - G1[1] * G2[0])
    assert abs(det - BZ_AREA) <= TOL_EXACT


def test_dispersion_at_zero():
    assert abs(dispersion_cartesian(np.array([0.0, 0.0])) - 2.0) <= TOL_EXACT


def test_dispersion_grid_matches_pointwise():
    geom = HoneycombGeometry(L=4)
    grid = dispersion_grid(geom)
    for mp in geom.momentum_points():
        assert abs(grid[mp.m1, mp.m2] - dispersion(geom, mp)) <= TOL_EXACT


def test_fermi_points_are_zeros():
    p_plus, p_minus = fermi_points(HoneycombGeometry(L=3))
    assert abs(dispersion_cartesian(p_plus)) <= 1e-12
    assert abs(dispersion_cartesian(p_minus)) <= 1e-12


def test_fermi_points_inequivalent():
    geom = HoneycombGeometry(L=9)
    p_plus, p_minus = fermi_points(geom)
    a1, a2 = geom.fractional_coords(p_plus - p_minus)
    # difference reduces to (1/3, 2/3) in lattice coordinates, not to (0, 0)
    assert min(a1, 1 - a1) > 0.2 and min(a2, 1 - a2) > 0.2


def test_fermi_point_separation():
    p_plus, p_minus = fermi_points(HoneycombGeometry(L=3))
    assert abs(np.linalg.norm(p_plus - p_minus) - 4 * math.pi / (3 * math.sqrt(3.0))) <= 1e-12


def test_fermi_point_grid_indices():
    geom = HoneycombGeometry(L=6)
    for om in (1, -1):
        mp = fermi_point_indices(geom, om)
        assert np.allclose(mp.kvec, fermi_point(om), atol=1e-12) or \
            abs(dispersion(geom, mp)) <= 1e-12
    with pytest.raises(MomentumNotOnGrid):
        fermi_point_indices(HoneycombGeometry(L=4), 1)


def test_dispersion_linearization_slope():
    # Omega(pF + k') = i k1' + omega k2' + O(|k'|^2): remainder slope is 2
    rng = np.random.default_rng(7)
    for omega in (1, -1):
        pf = fermi_point(omega)
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        eps = np.array([1e-3, 1e-4, 1e-5])
        rem = []
        for e in eps:
            kp = e * u
            lin = 1j * kp[0] + omega * kp[1]
            rem.append(abs(dispersion_cartesian(pf + kp) - lin))
        slope = np.polyfit(np.log(eps), np.log(rem), 1)[0]
        assert abs(slope - 2.0) < 0.1


def test_band_transform_diagonalizes():
    geom = HoneycombGeometry(L=5)
    for mp in geom.momentum_points():
        bd = band_transform(geom, mp)
        h = hopping_block(geom, mp.kvec)
        d = bd.unitary @ h @ bd.unitary.conj().T
        assert np.allclose(d, np.diag(bd.energies), atol=1e-12)
        assert np.allclose(bd.unitary @ bd.unitary.conj().T, np.eye(2), atol=1e-12)
        assert bd.energies[0] <= bd.energies[1]


def test_band_transform_degenerate_raises():
    with pytest.raises(DegenerateFermiPoint):
        band_transform(HoneycombGeometry(L=3), fermi_point(1))


def test_momentum_index_roundtrip_and_offgrid():
    geom = HoneycombGeometry(L=5)
    for mp in geom.momentum_points():
        back = geom.momentum_index(mp.kvec + 3 * G1 - 2 * G2)
        assert (back.m1, back.m2) == (mp.m1, mp.m2)
    with pytest.raises(MomentumNotOnGrid):
        geom.momentum_index(np.array([0.1234, 0.5678]))


def test_free_energy_beta_limit():
    # beta -> infinity recovers the ground-state energy per cell
    geom = HoneycombGeometry(L=4)
    e0 = free_specific_energy(geom)
    f_cold = free_specific_free_energy(geom, beta=200.0)
    assert abs(f_cold - e0) < 1e-6
    assert free_specific_free_energy(geom, 1.0) <= free_specific_free_energy(geom, 5.0)


def test_free_energy_thermodynamic_limit_consistency():
    # L x L sums converge to the zone integral as L grows
    e_inf = free_specific_energy_limit(n=900)
    diffs = [abs(free_specific_energy(HoneycombGeometry(L=L)) - e_inf) for L in (6, 12, 24)]
    assert diffs[2] < diffs[0]
    assert diffs[2] < 5e-3
    f_inf = free_specific_free_energy_limit(beta=2.0, n=900)
    assert abs(free_specific_free_energy(HoneycombGeometry(L=24), 2.0) - f_inf) < 5e-3


def test_matsubara_grid_symmetric_and_bounded():
    g = MatsubaraGrid(beta=2.0, M=3)
    freqs = g.frequencies
    assert len(freqs) == g.n_freq and g.n_freq % 2 == 0
    assert np.allclose(np.sort(-freqs), np.sort(freqs), atol=1e-12)
    assert np.all(np.abs(freqs) < (2.0 / 3.0) * 2**3)
    # smallest frequencies are +-pi/beta
    assert abs(np.min(np.abs(freqs)) - math.pi / 2.0) <= 1e-12


def test_matsubara_grid_small_universe():
    # criterion-5 sized universe: no more than 4 frequencies
    g = MatsubaraGrid(beta=2.0, M=3)
    assert g.n_freq == 4
