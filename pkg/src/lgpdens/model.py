"""Model assembly: prior covariance, Laplace fit and log marginal posterior per ``theta``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .kernel import (BasisPrior, Hyperparameters, HyperPrior, hyper_log_prior,
                     prior_cov, sqexp_cov, sqexp_cov_and_grads)
from .laplace import (DenseCovariance, ModeResult, ToeplitzCovariance, find_mode,
                      log_marginal_and_grad)
from .likelihood import GridLikelihood
from .redrank import RRCovariance, RRGaussian, kron_eig_truncate, rr_derivatives, rr_marginal
from .sampling import DenseGaussian, LaplaceSampler

METHODS = ("dense", "fft", "rr")


@dataclass
class LaplaceFit:
    theta: np.ndarray
    mode: ModeResult = field(repr=False)
    log_marginal: float
    grad: np.ndarray
    log_prior: float
    log_prior_grad: np.ndarray
    model: "DensityModel" = field(repr=False)
    cov: object = field(repr=False)
    _gaussian: object = field(default=None, repr=False)

    @property
    def f_hat(self) -> np.ndarray:
        return self.mode.f

    @property
    def u(self) -> np.ndarray:
        return self.mode.curvature.u.reshape(-1)

    @property
    def log_posterior(self) -> float:
        return self.log_marginal + self.log_prior

    @property
    def log_posterior_grad(self) -> np.ndarray:
        return self.grad + self.log_prior_grad

    @property
    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters.from_vector(self.theta)

    def gaussian(self):
        if self._gaussian is None:
            if isinstance(self.cov, RRCovariance):
                self._gaussian = RRGaussian(self.cov, self.mode.curvature)
            else:
                self._gaussian = DenseGaussian(self.cov.prior.chol, self.mode.curvature)
        return self._gaussian

    def sampler(self) -> LaplaceSampler:
        return LaplaceSampler(self.f_hat, self.gaussian(), self.model.lik, self.model.unit_volume)

    def sample(self, size: int = 8000, seed=None, importance: bool = True, **kw):
        return self.sampler().sample(size, seed, importance=importance, **kw)


class _FFTCov(ToeplitzCovariance):
    def __init__(self, prior, first_row, basis, **kw):
        super().__init__(first_row, basis, **kw)
        self.prior = prior


class DensityModel:
    """Logistic GP on a grid for density estimation or density regression.

    ``regression=True`` treats the first grid dimension as the predictor and
    normalizes each predictor slice separately.  ``method`` selects dense
    linear algebra, FFT/CG Newton steps (1D) or the reduced-rank prior (2D).
    """

    def __init__(self, grid: Grid, counts, *, regression: bool = False, method: str = "dense",
                 basis: bool = True, basis_variance: float = 100.0, prior: HyperPrior | None = None,
                 jitter: float = 1e-8, rank_cutoff: float = 1e-6, rank_max: float = 0.5,
                 newton_options: dict | None = None):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        if method == "fft" and grid.dims != 1:
            raise ValueError("FFT path requires a 1D grid")
        if method == "rr" and (grid.dims != 2 or regression):
            raise ValueError("reduced-rank path requires 2D density estimation")
        if regression and grid.dims != 2:
            raise ValueError("density regression needs a 2D (predictor, target) grid")
        self.grid = grid
        self.regression = regression
        self.method = method
        self.X = grid.normalized_centers
        self.lik = GridLikelihood(counts, grid.shape[0] if regression else 1)
        self.basis = (BasisPrior.polynomial(self.X, basis_variance) if basis
                      else BasisPrior.none(grid.m))
        self.prior = prior or HyperPrior.default(grid.dims)
        self.jitter = jitter
        self.rank_cutoff = rank_cutoff
        self.rank_max = rank_max
        self.newton_options = newton_options or {}
        self._warm = None

    @property
    def dims(self) -> int:
        return self.grid.dims

    @property
    def n_params(self) -> int:
        return 1 + self.grid.dims

    @property
    def unit_volume(self) -> float:
        if self.regression:
            return float(self.grid.widths[1])
        return self.grid.cell_volume

    def covariance(self, theta, with_grads: bool = True):
        """Covariance operator for ``theta`` and ``dC/dtheta`` (dense list or low-rank)."""
        theta = np.asarray(theta, dtype=float)
        if self.method == "rr":
            return self._rr_covariance(theta, with_grads), None
        if with_grads:
            K, grads = sqexp_cov_and_grads(self.X, theta)
        else:
            K, grads = sqexp_cov(self.X, theta), None
        prior = prior_cov(K, self.basis, self.jitter)
        if grads is not None:
            grads[0] = K + prior.jitter * np.eye(len(K))
        if self.method == "fft":
            row = K[0].copy()
            row[0] += prior.jitter
            return _FFTCov(prior, row, self.basis), grads
        return DenseCovariance(prior), grads

    def _rr_covariance(self, theta, with_grads):
        hp = Hyperparameters.from_vector(theta)
        x1 = self.grid.normalized_axis(0)[:, None]
        x2 = self.grid.normalized_axis(1)[:, None]
        K1, g1 = sqexp_cov_and_grads(x1, [hp.log_sigma2, hp.log_lengthscales[0]])
        K2, g2 = sqexp_cov_and_grads(x2, [0.0, hp.log_lengthscales[1]])
        rrp = kron_eig_truncate(K1, K2, self.rank_cutoff, self.rank_max)
        eps = self.jitter * hp.sigma2
        rrp.Lambda = rrp.Lambda + eps
        derivs = None
        if with_grads:
            derivs = rr_derivatives(rrp, [g1[1]], [g2[1]])
            derivs[0].dlam = derivs[0].dlam + eps
        return RRCovariance(rrp, self.basis, derivs)

    def fit(self, theta, with_grad: bool = True, warm: bool = True, a0=None) -> LaplaceFit:
        theta = np.asarray(theta, dtype=float)
        cov, grads = self.covariance(theta, with_grad)
        if a0 is None and warm and self._warm is not None:
            a0 = self._warm
        mode = find_mode(cov, self.lik, a0=a0, **self.newton_options)
        self._warm = mode.a
        if self.method == "rr":
            mr = rr_marginal(mode, cov, self.lik, with_grad)
        else:
            mr = log_marginal_and_grad(mode, cov.prior.matrix, self.lik, grads)
        lp, lpg = hyper_log_prior(theta, self.prior)
        grad = mr.grad if with_grad else np.full(self.n_params, np.nan)
        return LaplaceFit(theta.copy(), mode, mr.log_marginal, grad, lp, lpg, self, cov)

    def objective(self, theta) -> tuple[float, np.ndarray]:
        """Log marginal posterior of ``theta`` (up to a constant) and its gradient."""
        fit = self.fit(theta)
        return fit.log_posterior, fit.log_posterior_grad
