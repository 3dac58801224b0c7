"""End-to-end estimation: grid, MAP hyperparameters, sampling and summaries."""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import BinnedData, Grid, bin_data, build_grid, default_bounds, DEFAULT_M
from .hyper import CcdResult, MapResult, ccd_integrate, map_optimize
from .model import DensityModel
from .sampling import DensityPosterior, SplitConfig, density_summary, occupied_range


@dataclass
class EstimateOptions:
    method: str = "dense"
    integration: str = "map"
    importance: bool = True
    rejection: bool = False
    bounded: bool = False
    samples: int = 8000
    seed: int | None = None
    rank_cutoff: float = 1e-6
    rank_max: float = 0.5
    basis: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Estimate:
    grid: Grid
    data: BinnedData
    model: DensityModel = field(repr=False)
    map: MapResult = field(repr=False)
    posterior: DensityPosterior = field(repr=False)
    summary: dict = field(repr=False)
    options: EstimateOptions
    ccd: CcdResult | None = field(default=None, repr=False)
    warnings: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.summary["mean"]

    def predictive(self, points) -> np.ndarray:
        """Posterior mean density at arbitrary points (value of the enclosing cell)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.grid.dims)
        return self.mean[self.grid.cell_index(pts)]


def make_grid(points, m=None, bounds=None, pad: float = 0.1) -> Grid:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    d = points.shape[1]
    if m is None:
        m = DEFAULT_M[d]
    if bounds is None:
        bounds = default_bounds(points, pad)
    return build_grid(bounds, m)


def fit_density(points, grid: Grid, options: EstimateOptions | None = None,
                regression: bool = False) -> Estimate:
    """Run the full estimator on a fixed grid."""
    options = options or EstimateOptions()
    timings = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t0 = time.perf_counter()
        data = bin_data(grid, points)
        model = DensityModel(grid, data.counts, regression=regression, method=options.method,
                             basis=options.basis, rank_cutoff=options.rank_cutoff,
                             rank_max=options.rank_max)
        mres = map_optimize(model)
        timings["map"] = time.perf_counter() - t0
        occupied = None
        if options.rejection and not options.bounded and grid.dims == 1:
            occupied = occupied_range(data.counts)
        cfg = SplitConfig()

        def predictor(fit, size=options.samples, seed=options.seed):
            return fit.sampler().sample(size, seed, importance=options.importance,
                                        config=cfg, occupied=occupied)

        t0 = time.perf_counter()
        ccd = None
        if options.integration == "ccd":
            n_pts = 1 + 2 * model.n_params + 2**model.n_params
            per = max(1, -(-options.samples // n_pts))
            ccd = ccd_integrate(model, mres.fit, lambda f: predictor(f, per))
            post = ccd.posterior
        elif options.integration == "map":
            post = predictor(mres.fit)
        else:
            raise ValueError(f"unknown integration {options.integration!r}")
        timings["sampling"] = time.perf_counter() - t0
        summary = density_summary(post)
    notes = [str(w.message) for w in caught]
    return Estimate(grid, data, model, mres, post, summary, options, ccd, notes, timings)


def estimate_density(points, m=None, bounds=None, options: EstimateOptions | None = None,
                     regression: bool = False) -> Estimate:
    return fit_density(points, make_grid(points, m, bounds), options, regression)


def conditional_quantile(estimate: Estimate, prob: float = 0.5) -> np.ndarray:
    """Per-slice quantile of the target for a density-regression estimate."""
    g = estimate.grid
    P = estimate.mean.reshape(g.shape) * g.widths[1]
    cdf = np.cumsum(P, axis=1)
    edges = g.edges(1)
    out = np.empty(g.shape[0])
    for i in range(g.shape[0]):
        c = np.concatenate([[0.0], cdf[i]])
        out[i] = np.interp(prob, c, edges)
    return out
