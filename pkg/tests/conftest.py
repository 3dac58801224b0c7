import numpy as np
import pytest

from lgpdens.datasets import simulate_dataset
from lgpdens.grid import bin_data, build_grid, default_bounds


def fd_grad(fun, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


@pytest.fixture(scope="session")
def mix_t4_100():
    ds = simulate_dataset("mix-t4", 100, 11)
    grid = build_grid(default_bounds(ds.points), 50)
    return ds, grid, bin_data(grid, ds.points).counts


@pytest.fixture(scope="session")
def gauss2d_8x8():
    ds = simulate_dataset("mix-gauss-2d", 60, 5)
    grid = build_grid(default_bounds(ds.points), (8, 8))
    return ds, grid, bin_data(grid, ds.points).counts
