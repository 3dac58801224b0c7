"""Posterior density sampling, importance correction and tail rejection.

Latent draws come from the Laplace approximation ``N(f_hat, Sigma)``.  The
exact unnormalized log posterior differs from the Gaussian log density only
through the likelihood's Taylor remainder at the mode, which gives the
importance weights without any solve with the prior covariance.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .likelihood import Curvature, GridLikelihood

log = logging.getLogger(__name__)

ESS_THRESHOLD = 200.0


class DenseGaussian:
    """``Sigma = (C^{-1} + W)^{-1}`` with the factor ``S = L_C L_B^{-T}``.

    ``C = L_C L_C^T`` and ``I + L_C^T W L_C = L_B L_B^T``, so ``S S^T = Sigma``
    without ever forming an inverse of ``C``.
    """

    def __init__(self, chol_C: np.ndarray, curv: Curvature):
        self.L_C = chol_C
        self.m = len(chol_C)
        Y = curv.RT(chol_C)
        B = Y.T @ Y
        B[np.diag_indices_from(B)] += 1.0
        self.L_B = np.linalg.cholesky(B)
        self._axes = None

    def transform(self, z):
        """Map standard normal coordinates (``m`` or ``m x k``) to latent offsets."""
        w = scipy.linalg.solve_triangular(self.L_B.T, z, lower=False)
        return self.L_C @ w

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.transform(rng.standard_normal((self.m, size))).T

    def log_det_factor(self) -> float:
        return float(np.log(np.diag(self.L_C)).sum() - np.log(np.diag(self.L_B)).sum())

    def covariance(self) -> np.ndarray:
        S = self.transform(np.eye(self.m))
        return S @ S.T

    def principal_axes(self, k: int):
        """Standard deviations and unit directions of the ``k`` largest axes."""
        if self._axes is None or self._axes[0].size < k:
            vals, vecs = np.linalg.eigh(self.covariance())
            order = np.argsort(vals)[::-1]
            self._axes = (np.sqrt(np.maximum(vals[order], 0.0)), vecs[:, order])
        sd, V = self._axes
        return sd[:k], V[:, :k]


@dataclass
class DensityPosterior:
    """Monte Carlo density samples on the grid.

    ``probs`` holds cell probabilities (each block of a row sums to one);
    ``cell_volume`` converts them to densities per unit volume.
    """

    probs: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    cell_volume: float
    n_blocks: int = 1
    latents: np.ndarray | None = field(default=None, repr=False)
    ess: float | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def densities(self) -> np.ndarray:
        return self.probs / self.cell_volume

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.densities

    @property
    def size(self) -> int:
        return len(self.weights)


def _block_softmax(F: np.ndarray, n_blocks: int) -> np.ndarray:
    S, m = F.shape
    Fb = F.reshape(S, n_blocks, m // n_blocks)
    P = np.exp(Fb - logsumexp(Fb, axis=2, keepdims=True))
    return P.reshape(S, m)


def kong_ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    return float(s * s / np.sum(w * w))


def _smooth_split(z, q_neg, q_pos):
    """Monotone map ``z -> z s(z)`` with ``s`` moving from ``q_neg`` to ``q_pos``.

    Returns the mapped values and ``log`` of the derivative.  Tails scale by
    ``q_pos`` (right) and ``q_neg`` (left); scales with a ratio up to about 5
    keep the map monotone.
    """
    c = 0.5 * (q_pos + q_neg)
    h = 0.5 * (q_pos - q_neg)
    t = np.tanh(z)
    s = c + h * t
    ds = s + z * h * (1.0 - t * t)
    return z * s, np.log(ds)


@dataclass
class SplitConfig:
    n_axes: int = 50
    probe: float = 1.0
    min_scale: float = 0.5
    max_scale: float = 2.0
    force_unit: bool = False
    ess_threshold: float = ESS_THRESHOLD


class LaplaceSampler:
    """Draws density samples from a Laplace fit (optionally corrected)."""

    def __init__(self, f_hat, gaussian, lik: GridLikelihood, cell_volume: float):
        self.f_hat = np.asarray(f_hat, dtype=float)
        self.gaussian = gaussian
        self.lik = lik
        self.cell_volume = cell_volume
        self.n_blocks = lik.n_blocks
        self._remainder = lik.remainder_at(self.f_hat)

    def densities_of(self, deltas) -> np.ndarray:
        return _block_softmax(self.f_hat[None, :] + deltas, self.n_blocks)

    def remainder(self, deltas) -> np.ndarray:
        return self._remainder(deltas)

    def split_scales(self, config: SplitConfig):
        k = min(config.n_axes, self.f_hat.size)
        sd, V = self.gaussian.principal_axes(k)
        if config.force_unit:
            return sd, V, np.ones(k), np.ones(k)
        steps = config.probe * (sd[None, :] * V).T          # k x m
        r_pos = self.remainder(steps)
        r_neg = self.remainder(-steps)
        p2 = config.probe**2

        def scale(r):
            # Gaussian matching of the drop in log density at +-probe sd
            drop = 0.5 * p2 - r
            q = np.where(drop > 0, config.probe / np.sqrt(2.0 * np.maximum(drop, 1e-300)),
                         config.max_scale)
            return np.clip(q, config.min_scale, config.max_scale)

        return sd, V, scale(r_neg), scale(r_pos)

    def split_transform(self, deltas, axes):
        """Apply the split-Gaussian map along principal axes.

        Returns transformed offsets and the log importance weights.
        """
        sd, V, q_neg, q_pos = axes
        z = (deltas @ V) / sd                                     # S x k
        eps, log_jac = _smooth_split(z, q_neg[None, :], q_pos[None, :])
        new = deltas + ((eps - z) * sd) @ V.T
        logw = (self.remainder(new) - 0.5 * np.sum(eps**2, axis=1)
                + 0.5 * np.sum(z**2, axis=1) + np.sum(log_jac, axis=1))
        return new, logw

    def sample(self, size: int = 8000, seed=None, importance: bool = True,
               config: SplitConfig | None = None, occupied=None,
               max_attempts: int = 50) -> DensityPosterior:
        """Draw ``size`` density samples.

        ``occupied`` enables tail rejection (1D): a pair ``(first, last)`` of
        the outermost cells holding data.
        """
        config = config or SplitConfig()
        rng = np.random.default_rng(seed)
        axes = self.split_scales(config) if importance else None
        notes: list[str] = []

        def draw(k):
            d = self.gaussian.draw(rng, k)
            if axes is None:
                return d, np.zeros(k)
            return self.split_transform(d, axes)

        deltas, logw = draw(size)
        probs = self.densities_of(deltas)
        if occupied is not None:
            first, last = occupied
            ok = tails_decreasing(probs, first, last)
            attempts = 1
            while not ok.all() and attempts < max_attempts:
                idx = np.flatnonzero(~ok)
                d_new, lw_new = draw(idx.size)
                p_new = self.densities_of(d_new)
                deltas[idx], logw[idx], probs[idx] = d_new, lw_new, p_new
                ok[idx] = tails_decreasing(p_new, first, last)
                attempts += 1
            if not ok.all():
                msg = (f"tail rejection: {int((~ok).sum())} samples kept after "
                       f"{max_attempts} attempts")
                notes.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)

        post = DensityPosterior(probs, np.full(size, 1.0 / size), self.cell_volume,
                                self.n_blocks, deltas, float(size), notes)
        if importance:
            post = _weighted(post, logw, config.ess_threshold)
        return post


def _weighted(post: DensityPosterior, logw, ess_threshold: float) -> DensityPosterior:
    logw = np.asarray(logw, dtype=float)
    if not np.all(np.isfinite(logw)):
        raise FloatingPointError("non-finite target log density in importance weighting")
    w = np.exp(logw - logw.max())
    w /= w.sum()
    ess = kong_ess(w)
    notes = list(post.warnings)
    if ess < ess_threshold:
        w = truncate_weights(w)
        msg = f"low effective sample size {ess:.1f}; importance weights truncated"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return replace(post, weights=w, ess=ess, warnings=notes)


def truncate_weights(w) -> np.ndarray:
    """Cap normalized weights at ``mean(w) sqrt(S)`` and renormalize."""
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    cap = w.mean() * np.sqrt(w.size)
    w = np.minimum(w, cap)
    return w / w.sum()


def tails_decreasing(probs, first: int, last: int) -> np.ndarray:
    """True where a density is non-increasing outward from the occupied range."""
    P = np.atleast_2d(probs)
    right = np.all(np.diff(P[:, last:], axis=1) <= 0, axis=1)
    left = np.all(np.diff(P[:, : first + 1], axis=1) >= 0, axis=1)
    return right & left


def rejection_tails(density, occupied_range, bounded: bool = False) -> bool:
    """Accept or reject one sampled 1D density by the decreasing-tails rule."""
    if bounded:
        return True
    first, last = occupied_range
    return bool(tails_decreasing(np.asarray(density)[None, :], first, last)[0])


def occupied_range(counts) -> tuple[int, int] | None:
    idx = np.flatnonzero(np.asarray(counts) > 0)
    if idx.size == 0:
        return None
    return int(idx[0]), int(idx[-1])


def sample_posterior(fit, size: int = 8000, seed=None) -> DensityPosterior:
    """Plain Laplace draws with uniform weights."""
    return fit.sampler().sample(size, seed, importance=False)


def importance_correction(fit, samples: DensityPosterior, config: SplitConfig | None = None,
                          log_target=None) -> DensityPosterior:
    """Reweight Laplace draws through a split-Gaussian proposal.

    ``samples`` must carry the Gaussian latent offsets.  ``log_target``
    optionally replaces the likelihood remainder (the log ratio of target to
    Laplace density) for testing.
    """
    config = config or SplitConfig()
    sampler = fit.sampler() if hasattr(fit, "sampler") else fit
    if samples.latents is None:
        raise ValueError("samples carry no latent draws")
    axes = sampler.split_scales(config)
    if log_target is not None:
        saved = sampler.remainder
        sampler.remainder = log_target
        try:
            deltas, logw = sampler.split_transform(samples.latents, axes)
        finally:
            sampler.remainder = saved
    else:
        deltas, logw = sampler.split_transform(samples.latents, axes)
    post = replace(samples, probs=sampler.densities_of(deltas), latents=deltas)
    return _weighted(post, logw, config.ess_threshold)


def weighted_quantiles(values, weights, probs) -> np.ndarray:
    """Per-column weighted quantiles of ``values`` (``S x m``)."""
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    order = np.argsort(values, axis=0, kind="stable")
    sv = np.take_along_axis(values, order, axis=0)
    cw = np.cumsum(w[order], axis=0)
    out = np.empty((len(probs), values.shape[1]))
    cols = np.arange(values.shape[1])
    for i, p in enumerate(probs):
        idx = np.argmax(cw >= p - 1e-12, axis=0)
        out[i] = sv[idx, cols]
    return out


def density_summary(posterior: DensityPosterior, probs=(0.025, 0.975)) -> dict:
    """Weighted mean and quantile bands per cell, as densities per unit volume."""
    dens = posterior.densities
    q = weighted_quantiles(dens, posterior.weights, probs)
    return {"mean": posterior.mean, "quantiles": q, "probs": tuple(probs)}
