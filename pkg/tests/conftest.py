"""Shared fixtures: bundled grids and the expensive optimization runs.

The descent runs are session-scoped because the p=10 three-case sweep takes
minutes; every test that inspects a converged result shares the same run.
"""

import numpy as np
import pytest

from gridcharge import load_grid
from gridcharge.control import lqr_gain
from gridcharge.coopt import (OptimizationConfig, default_demand,
                              run_algorithm1, run_algorithm2)
from gridcharge.dynamics import solve_equilibrium
from gridcharge.linearization import linearize, reduce_model
from gridcharge.network import bundled_grid_path


@pytest.fixture(scope="session")
def grid33():
    return load_grid(bundled_grid_path("ieee33"))


@pytest.fixture(scope="session")
def grid_p3():
    return load_grid(bundled_grid_path("ieee33_p3"))


@pytest.fixture(scope="session")
def grid_p10():
    return load_grid(bundled_grid_path("ieee33_p10"))


@pytest.fixture(scope="session")
def demand_p3(grid_p3):
    return default_demand(grid_p3)


@pytest.fixture(scope="session")
def op_p3(grid_p3, demand_p3):
    return solve_equilibrium(grid_p3, demand_p3)


@pytest.fixture(scope="session")
def full_p3(grid_p3, op_p3):
    return linearize(grid_p3, op_p3)


@pytest.fixture(scope="session")
def red_p3(full_p3):
    return reduce_model(full_p3)


@pytest.fixture(scope="session")
def gain_p3(red_p3):
    k, _ = lqr_gain(red_p3.a, red_p3.b, red_p3.q, red_p3.r)
    return k


@pytest.fixture(scope="session")
def op_p10(grid_p10):
    return solve_equilibrium(grid_p10, default_demand(grid_p10))


@pytest.fixture(scope="session")
def full_p10(grid_p10, op_p10):
    return linearize(grid_p10, op_p10)


@pytest.fixture(scope="session")
def alg1_p3(grid_p3, demand_p3):
    config = OptimizationConfig(i_demand=demand_p3, gamma=0.0)
    return run_algorithm1(config, grid_p3)


@pytest.fixture(scope="session")
def alg2_p3_zero(grid_p3, demand_p3):
    config = OptimizationConfig(i_demand=demand_p3, gamma1=0.0, gamma2=0.0)
    return run_algorithm2(config, grid_p3)


@pytest.fixture(scope="session")
def alg2_cases(grid_p10):
    """Three-case gamma sweep on the 10-station bidirectional scenario."""
    demand = default_demand(grid_p10)
    settings = {"case1": (0.0, 0.0), "case2": (0.33, 0.33), "case3": (0.0, 0.6)}
    results = {}
    for name, (g1, g2) in settings.items():
        config = OptimizationConfig(i_demand=demand, gamma1=g1, gamma2=g2)
        results[name] = run_algorithm2(config, grid_p10)
    return demand, results
