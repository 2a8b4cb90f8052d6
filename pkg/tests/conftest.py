"""Shared fixtures: the expensive flow studies are computed once per session."""

import pytest

from fermicrg.honeycomb import HoneycombGeometry, MatsubaraGrid
from fermicrg.multiscale_rg import IRFlow, UVFlow


@pytest.fixture(scope="session")
def ir_study():
    """Infrared flow on a grid wide enough to resolve three valley shells."""
    geom = HoneycombGeometry(L=48)
    grid = MatsubaraGrid(beta=32.0, M=5)
    return IRFlow(geom, grid, u=1.0).run()


@pytest.fixture(scope="session")
def uv_study():
    """Deep ultraviolet sweep used for the per-scale decay checks."""
    geom = HoneycombGeometry(L=1)
    grid = MatsubaraGrid(beta=2.0, M=10)
    return UVFlow(geom, grid).run()
