"""Exact-diagonalization oracle: traces, symmetries, derivatives, 2-point."""
import math

import numpy as np
import pytest

from fermicrg.errors import LatticeTooLarge
from fermicrg.honeycomb import HoneycombGeometry, free_specific_free_energy
from fermicrg.ed_oracle import (
    build_hamiltonian,
    density,
    ed_schwinger_2pt,
    free_energy,
    free_schwinger_2pt,
    hp_symmetry_residual,
    perturbative_coefficients,
    s0_matsubara,
)


def test_free_energy_matches_closed_form_L1():
    geom = HoneycombGeometry(L=1)
    spec = build_hamiltonian(geom, U=0.0)
    for beta in (0.7, 2.0, 5.0):
        assert abs(free_energy(spec, beta) - free_specific_free_energy(geom, beta)) <= 1e-12


def test_free_energy_matches_closed_form_L2():
    geom = HoneycombGeometry(L=2)
    spec = build_hamiltonian(geom, U=0.0)
    for beta in (1.0, 5.0):
        f_ed = free_energy(spec, beta)
        f_cf = free_specific_free_energy(geom, beta)
        assert abs(f_ed - f_cf) <= 1e-10 * max(1.0, abs(f_cf))


def test_generic_sector_route_agrees_with_spinless_route():
    # U = 0 through the coupled-sector path must equal the factorized path
    geom = HoneycombGeometry(L=1)
    spec = build_hamiltonian(geom, U=0.0)
    ev = np.concatenate([spec.eigensystem(k)[0] for k in spec.fock.sectors])
    e0 = float(ev.min())
    beta = 1.3
    log_z = -beta * e0 + math.log(float(np.sum(np.exp(-beta * (ev - e0)))))
    f_generic = -log_z / (beta * geom.n_cells)
    assert abs(f_generic - free_energy(spec, beta)) <= 1e-12


def test_lattice_too_large():
    with pytest.raises(LatticeTooLarge):
        build_hamiltonian(HoneycombGeometry(L=3))


def test_half_filling_density():
    # L = 2 is skipped: the coupled-sector diagonalization is exponentially
    # heavier and half filling is already forced by the same sector pairing
    for L, U in ((1, 0.0), (1, 0.8)):
        spec = build_hamiltonian(HoneycombGeometry(L=L), U=U)
        assert abs(density(spec, beta=2.0) - 1.0) <= 1e-12


def test_hole_particle_isospectrality():
    for L, U in ((1, 0.0), (1, 1.1)):
        spec = build_hamiltonian(HoneycombGeometry(L=L), U=U)
        assert hp_symmetry_residual(spec) <= 1e-10


def test_perturbative_coefficients_first_order_vanishes():
    geom = HoneycombGeometry(L=1)
    coeffs = perturbative_coefficients(geom, beta=2.0, orders=2)
    assert abs(coeffs[1]) <= 1e-8
    assert abs(coeffs[0] - free_specific_free_energy(geom, 2.0)) <= 1e-12
    # second order must be finite and negative-definite-free (just finite here)
    assert math.isfinite(coeffs[2])


def test_schwinger_equal_time_trace_vs_formula():
    geom = HoneycombGeometry(L=1)
    spec = build_hamiltonian(geom, U=0.0)
    beta = 2.0
    for x in ((0.0, 0, 0), (0.7, 0, 0), (-0.3, 0, 0), (1.0, 0, 0)):
        a = ed_schwinger_2pt(spec, beta, x)
        b = free_schwinger_2pt(geom, beta, x)
        assert np.max(np.abs(a - b)) <= 1e-10


def test_schwinger_matsubara_sum_vs_sharp_formula():
    geom = HoneycombGeometry(L=2)
    beta = 2.0
    rng = np.random.default_rng(11)
    for _ in range(20):
        x0 = float(rng.uniform(-beta / 2 + 1e-3, beta / 2))
        n1, n2 = int(rng.integers(0, 2)), int(rng.integers(0, 2))
        a = s0_matsubara(geom, beta, (x0, n1, n2))
        b = free_schwinger_2pt(geom, beta, (x0, n1, n2))
        assert np.max(np.abs(a - b)) <= 1e-9


def test_schwinger_antiperiodic_jump():
    # discontinuity at x0 = 0 equals the identity on the diagonal block
    geom = HoneycombGeometry(L=2)
    beta = 2.0
    eps = 1e-9
    below = free_schwinger_2pt(geom, beta, (-eps, 0, 0))
    above = free_schwinger_2pt(geom, beta, (eps, 0, 0))
    assert np.allclose(above - below, np.eye(2), atol=1e-6)
