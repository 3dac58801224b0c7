"""Regular 1D/2D grids, binning of observations and coordinate normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_M = {1: (400,), 2: (20, 20)}


class GridError(ValueError):
    """Invalid grid specification or data outside the grid."""


@dataclass(frozen=True)
class Grid:
    """Regular grid of equal-width cells.

    Cells are enumerated with the first dimension varying slowest, so a 2D
    grid of shape ``(m1, m2)`` stores cell ``(i, j)`` at index ``i * m2 + j``.
    With this ordering a separable kernel on the grid is ``kron(K1, K2)``.
    """

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    centers: np.ndarray = field(repr=False)
    cell_volume: float
    shift: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    @property
    def dims(self) -> int:
        return len(self.shape)

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / mk for (lo, hi), mk in zip(self.bounds, self.shape)])

    def axis_centers(self, k: int) -> np.ndarray:
        lo, hi = self.bounds[k]
        mk = self.shape[k]
        return lo + (np.arange(mk) + 0.5) * (hi - lo) / mk

    def edges(self, k: int) -> np.ndarray:
        lo, hi = self.bounds[k]
        return np.linspace(lo, hi, self.shape[k] + 1)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def unnormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.shift

    @property
    def normalized_centers(self) -> np.ndarray:
        axes = [self.normalized_axis(k) for k in range(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel() for g in mesh])

    def normalized_axis(self, k: int) -> np.ndarray:
        # from cell indices: exact zero mean, independent of the offset lo
        mk = self.shape[k]
        return (np.arange(mk) + 0.5 - 0.5 * mk) / np.sqrt((mk * mk - 1) / 12.0)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index of each point (points assumed inside bounds)."""
        points = _as_points(points, self.dims)
        idx = np.zeros(len(points), dtype=int)
        for k in range(self.dims):
            mk = self.shape[k]
            # half-open cells [e_i, e_{i+1}), the last one closed
            ik = np.searchsorted(self.edges(k), points[:, k], side="right") - 1
            ik = np.clip(ik, 0, mk - 1)
            idx = idx * mk + ik
        return idx

    def to_dict(self) -> dict:
        return {
            "bounds": [list(b) for b in self.bounds],
            "m": list(self.shape),
            "centers": self.centers.tolist(),
        }


@dataclass(frozen=True)
class BinnedData:
    counts: np.ndarray
    points: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _as_points(points, dims: int | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise GridError("points must be an n x d array")
    if dims is not None and pts.shape[1] != dims:
        raise GridError(f"points have {pts.shape[1]} columns, grid has {dims} dims")
    return pts


def build_grid(bounds, m_per_dim) -> Grid:
    """Build a regular grid over ``bounds`` with ``m_per_dim`` cells per dimension.

    ``bounds`` is a sequence of ``(lo, hi)`` pairs (a single pair is accepted
    for 1D) and ``m_per_dim`` an int or one int per dimension.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim == 1:
        bounds = bounds[None, :]
    if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] not in (1, 2):
        raise GridError("bounds must be one (lo, hi) pair per dimension, 1 or 2 dims")
    d = bounds.shape[0]
    m = np.atleast_1d(np.asarray(m_per_dim))
    if m.size == 1 and d > 1:
        m = np.repeat(m, d)
    if m.size != d:
        raise GridError(f"{m.size} grid sizes given for {d} dimensions")
    if np.any(m != np.floor(m)):
        raise GridError("grid sizes must be integers")
    m = m.astype(int)
    for (lo, hi) in bounds:
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
            raise GridError(f"degenerate interval [{lo}, {hi}]")
    if np.any(m < 2):
        raise GridError("need at least 2 cells per dimension")

    axes = [lo + (np.arange(mk) + 0.5) * (hi - lo) / mk for (lo, hi), mk in zip(bounds, m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.column_stack([g.ravel() for g in mesh])
    w = float(np.prod([(hi - lo) / mk for (lo, hi), mk in zip(bounds, m)]))
    # mean and population std of equally spaced centers
    shift = bounds.mean(axis=1)
    scale = (bounds[:, 1] - bounds[:, 0]) / m * np.sqrt((m * m - 1) / 12.0)
    return Grid(
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        shape=tuple(int(v) for v in m),
        centers=centers,
        cell_volume=w,
        shift=shift,
        scale=scale,
    )


def bin_data(grid: Grid, points) -> BinnedData:
    """Count points per cell; raises ``GridError`` listing points outside the grid."""
    pts = _as_points(points, grid.dims)
    if not np.all(np.isfinite(pts)):
        bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
        raise GridError(f"non-finite points at indices {bad.tolist()}")
    lo = np.array([b[0] for b in grid.bounds])
    hi = np.array([b[1] for b in grid.bounds])
    outside = np.any((pts < lo) | (pts > hi), axis=1)
    if outside.any():
        bad = np.flatnonzero(outside)
        raise GridError(f"points outside grid bounds at indices {bad.tolist()}")
    counts = np.bincount(grid.cell_index(pts), minlength=grid.m)
    return BinnedData(counts=counts, points=pts)


def default_bounds(points, pad: float = 0.1) -> list[tuple[float, float]]:
    """Data range per dimension widened by ``pad`` times the range on each side."""
    pts = _as_points(points)
    if len(pts) < 2:
        raise GridError("need at least two points to choose bounds")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    rng = hi - lo
    if np.any(rng <= 0):
        raise GridError("zero data range in some dimension")
    return [(float(a - pad * r), float(b + pad * r)) for a, b, r in zip(lo, hi, rng)]
