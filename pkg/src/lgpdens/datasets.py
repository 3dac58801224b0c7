"""Simulated data sets with known densities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .grid import Grid

NAMES = ("t4", "mix-t4", "gamma", "trunc-gamma-gauss", "t8-2d", "mix-gauss-2d",
         "banana", "ring", "dr-trimodal")

T8_SHAPE = np.array([[1.0, 0.7], [0.7, 1.0]])
RING_RADIUS = 1.5
RING_SD = 0.2
DR_LAMBDA = 3.0
DR_SIGMA = 1.0


@dataclass
class SimulatedData:
    name: str
    points: np.ndarray
    density: Callable[[np.ndarray], np.ndarray]
    support: tuple | None = None
    regression: bool = False

    @property
    def dims(self) -> int:
        return self.points.shape[1]

    def density_on_grid(self, grid: Grid, normalize: bool = True) -> np.ndarray:
        """True density at the cell centers, renormalized over the grid by default.

        For density regression this is the conditional density of the target
        within each predictor slice.
        """
        p = np.asarray(self.density(grid.centers), dtype=float)
        if not normalize:
            return p
        if self.regression:
            P = p.reshape(grid.shape)
            P = P / (P.sum(axis=1, keepdims=True) * grid.widths[1])
            return P.reshape(-1)
        return p / (p.sum() * grid.cell_volume)


def _mix_t4_pdf(x):
    x = np.asarray(x)[..., 0]
    return 0.75 * stats.t.pdf(x, 4) + 0.25 * stats.t.pdf(x, 4, loc=3, scale=1 / 8)


def _gamma_pdf(x):
    return stats.gamma.pdf(np.asarray(x)[..., 0], 1.0, scale=1 / 3)


_TGG_MASS = (0.75 * stats.gamma.cdf(1.0, 1.0, scale=1 / 3)
             + 0.25 * (stats.norm.cdf(1.0, 0.75, 1 / 8) - stats.norm.cdf(0.0, 0.75, 1 / 8)))


def _tgg_pdf(x):
    x = np.asarray(x)[..., 0]
    p = 0.75 * stats.gamma.pdf(x, 1.0, scale=1 / 3) + 0.25 * stats.norm.pdf(x, 0.75, 1 / 8)
    return np.where((x > 0) & (x < 1), p / _TGG_MASS, 0.0)


def _t8_pdf(x):
    return stats.multivariate_t.pdf(np.asarray(x), loc=np.zeros(2), shape=T8_SHAPE, df=8)


def _mix_gauss_pdf(x):
    x = np.asarray(x)
    return (0.5 * stats.multivariate_normal.pdf(x, np.zeros(2), np.eye(2))
            + 0.5 * stats.multivariate_normal.pdf(x, np.full(2, 2.0), 0.5 * np.eye(2)))


def _banana_pdf(x):
    x = np.asarray(x)
    x1, x2 = x[..., 0], x[..., 1]
    return stats.norm.pdf(x1, 0, 10) * stats.norm.pdf(x2, x1**2 / 50 - 0.2, 1)


def _ring_pdf(x, n_nodes: int = 1024):
    # periodic integrand: the midpoint rule is spectrally accurate
    x = np.atleast_2d(np.asarray(x))
    phi = -np.pi + (np.arange(n_nodes) + 0.5) * (2 * np.pi / n_nodes)
    c = RING_RADIUS * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    d2 = ((x[:, None, :] - c[None]) ** 2).sum(axis=2)
    k = np.exp(-0.5 * d2 / RING_SD**2) / (2 * np.pi * RING_SD**2)
    return k.mean(axis=1)


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def dr_conditional_median(z):
    return DR_LAMBDA * np.exp(-_logistic(np.asarray(z, dtype=float)))


def _dr_conditional_pdf(x):
    x = np.asarray(x)
    s = _logistic(x[..., 0])
    return stats.norm.pdf(x[..., 1], DR_LAMBDA * np.exp(-s), s * DR_SIGMA)


def _mixture_labels(rng, n, weights):
    return rng.choice(len(weights), size=n, p=weights)


def _draw_tgg(rng, n):
    out = np.empty(0)
    while out.size < n:
        k = 2 * (n - out.size) + 16
        lab = _mixture_labels(rng, k, [0.75, 0.25])
        x = np.where(lab == 0, rng.gamma(1.0, 1 / 3, k), rng.normal(0.75, 1 / 8, k))
        out = np.concatenate([out, x[(x > 0) & (x < 1)]])
    return out[:n]


def simulate_dataset(name: str, n: int, seed=None) -> SimulatedData:
    """Draw ``n`` points from a named generator; ``points`` is ``n x d``."""
    rng = np.random.default_rng(seed)
    if name == "t4":
        pts = rng.standard_t(4, n)[:, None]
        return SimulatedData(name, pts, lambda x: stats.t.pdf(np.asarray(x)[..., 0], 4))
    if name == "mix-t4":
        lab = _mixture_labels(rng, n, [0.75, 0.25])
        t = rng.standard_t(4, n)
        pts = np.where(lab == 0, t, 3 + t / 8)[:, None]
        return SimulatedData(name, pts, _mix_t4_pdf)
    if name == "gamma":
        return SimulatedData(name, rng.gamma(1.0, 1 / 3, n)[:, None], _gamma_pdf, ((0, np.inf),))
    if name == "trunc-gamma-gauss":
        return SimulatedData(name, _draw_tgg(rng, n)[:, None], _tgg_pdf, ((0.0, 1.0),))
    if name == "t8-2d":
        pts = stats.multivariate_t.rvs(np.zeros(2), T8_SHAPE, df=8, size=n, random_state=rng)
        return SimulatedData(name, np.asarray(pts).reshape(n, 2), _t8_pdf)
    if name == "mix-gauss-2d":
        lab = _mixture_labels(rng, n, [0.5, 0.5])
        e = rng.standard_normal((n, 2))
        pts = np.where(lab[:, None] == 0, e, 2.0 + np.sqrt(0.5) * e)
        return SimulatedData(name, pts, _mix_gauss_pdf)
    if name == "banana":
        x1 = rng.normal(0, 10, n)
        x2 = rng.normal(x1**2 / 50 - 0.2, 1.0)
        return SimulatedData(name, np.column_stack([x1, x2]), _banana_pdf)
    if name == "ring":
        phi = rng.uniform(-np.pi, np.pi, n)
        pts = RING_RADIUS * np.column_stack([np.cos(phi), np.sin(phi)])
        pts = pts + RING_SD * rng.standard_normal((n, 2))
        return SimulatedData(name, pts, _ring_pdf)
    if name == "dr-trimodal":
        lab = _mixture_labels(rng, n, [9 / 20, 9 / 20, 1 / 10])
        mu = np.array([-1.2, 1.2, 0.0])[lab]
        sd = np.array([0.6, 0.6, 0.25])[lab]
        z = rng.normal(mu, sd)
        s = _logistic(z)
        t = DR_LAMBDA * np.exp(-s) + s * rng.normal(0.0, DR_SIGMA, n)
        return SimulatedData(name, np.column_stack([z, t]), _dr_conditional_pdf,
                             regression=True)
    raise ValueError(f"unknown data set {name!r}; choose from {', '.join(NAMES)}")
