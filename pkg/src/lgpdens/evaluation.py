"""Density comparison metrics, leave-one-out CV and the Bayesian bootstrap."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FLOOR = 1e-300


def _check(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"densities live on different grids: {a.shape} vs {b.shape}")
    return a, b


def mlpd(estimate, truth, cell_volume: float) -> float:
    """Mean log predictive density of ``estimate`` under ``truth`` on the grid."""
    est, tr = _check(estimate, truth)
    return float(np.sum(tr * cell_volume * np.log(np.maximum(est, FLOOR))))


def kl_divergence(truth, estimate, cell_volume: float) -> float:
    tr, est = _check(truth, estimate)
    pos = tr > 0
    return float(np.sum(tr[pos] * cell_volume
                        * (np.log(tr[pos]) - np.log(np.maximum(est[pos], FLOOR)))))


def grid_entropy(density, cell_volume: float) -> float:
    p = np.asarray(density, dtype=float)
    pos = p > 0
    return float(-np.sum(p[pos] * cell_volume * np.log(p[pos])))


@dataclass
class LooResult:
    scores: np.ndarray
    failed: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        ok = np.isfinite(self.scores)
        return float(self.scores[ok].mean())


def loo_cv_mlpd(points, estimator) -> LooResult:
    """Leave-one-out log predictive densities.

    ``estimator(train_points)`` returns a callable mapping query points to
    predictive densities (the caller fixes the grid so every held-out point
    is covered).  Failed folds are reported and excluded.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    if n < 2:
        raise ValueError("leave-one-out needs at least two points")
    scores = np.full(n, np.nan)
    failed = []
    for i in range(n):
        train = np.delete(points, i, axis=0)
        try:
            dens = estimator(train)
            scores[i] = float(np.log(max(float(np.asarray(dens(points[i:i + 1]))[0]), FLOOR)))
        except (np.linalg.LinAlgError, RuntimeError, ArithmeticError, ValueError) as exc:
            failed.append(i)
            warnings.warn(f"fold {i} failed: {exc}", RuntimeWarning, stacklevel=2)
    return LooResult(scores, failed)


def bayesian_bootstrap(values, draws: int = 10000, seed=None, return_weights: bool = False):
    """Weighted means under Dirichlet(1, ..., 1) weights."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 1:
        raise ValueError("need at least one value")
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=(draws, v.size))
    w = e / e.sum(axis=1, keepdims=True)
    out = w @ v
    return (out, w) if return_weights else out
