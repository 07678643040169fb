"""Shared fixtures: the standard constant-coefficient plant solved at the
desk-scale grids used across the suite. Kernel solves are session-scoped
because they dominate setup cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from hypbc import (DisturbanceSet, SpatialGrid, SystemParams,
                   build_transport_maps, solve_control_kernels,
                   solve_integral_weights, solve_inverse_kernels,
                   solve_observer_kernels)


@dataclass
class PlantStack:
    grid: object
    params: object
    maps: object
    kernels: object
    lset: object
    weights: object
    okernels: object  # gains not attached


def make_stack(n_cells: int, lam=1.0, mu=1.0, gamma1=0.5, gamma2=0.5,
               q=0.8, rho=0.3, observer: bool = True) -> PlantStack:
    grid = SpatialGrid.make(n_cells)
    params = SystemParams.from_coefficients(grid, lam, mu, gamma1, gamma2,
                                            q=q, rho=rho)
    maps = build_transport_maps(params, grid)
    kern = solve_control_kernels(params, grid, maps)
    lset = solve_inverse_kernels(kern, grid)
    weights = solve_integral_weights(lset, params, grid)
    okern = (solve_observer_kernels(params, grid, maps) if observer else None)
    return PlantStack(grid=grid, params=params, maps=maps, kernels=kern,
                      lset=lset, weights=weights, okernels=okern)


@pytest.fixture(scope="session")
def stack100() -> PlantStack:
    return make_stack(100)


@pytest.fixture(scope="session")
def stack200() -> PlantStack:
    return make_stack(200)


@pytest.fixture(scope="session")
def stack400() -> PlantStack:
    return make_stack(400)


@pytest.fixture(scope="session")
def stack100_var() -> PlantStack:
    """Variable-coefficient plant for generality checks."""
    return make_stack(100, lam=lambda x: 1.0 + 0.3 * x,
                      mu=lambda x: 1.2 - 0.2 * x, gamma1=0.4, gamma2=0.3,
                      q=0.8, rho=0.3)


def static_disturbances(grid) -> DisturbanceSet:
    from hypbc import signals as sig
    ones = np.ones(grid.n_cells + 1)
    return DisturbanceSet(d1=sig.Constant(1.0), d2=sig.Constant(0.5),
                          d3=sig.Constant(1.0), d4=sig.Constant(0.5),
                          m1=ones, m2=ones.copy(), n=sig.zero())
