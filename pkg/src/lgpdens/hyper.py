"""Type-II MAP hyperparameters and CCD integration over them."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .laplace import ConvergenceError
from .model import DensityModel, LaplaceFit
from .sampling import DensityPosterior

log = logging.getLogger(__name__)


@dataclass
class MapResult:
    theta: np.ndarray
    fit: LaplaceFit = field(repr=False)
    objective: float
    grad_norm: float
    iterations: int
    evaluations: int
    init_objective: float


def map_optimize(model: DensityModel, init=None, gtol: float = 1e-4,
                 max_iter: int = 200) -> MapResult:
    """Maximize ``log q(y|theta) + log p(theta)`` over log hyperparameters by BFGS."""
    theta0 = np.zeros(model.n_params) if init is None else np.asarray(init, dtype=float)
    first = model.fit(theta0)
    if not np.isfinite(first.log_posterior):
        raise ConvergenceError("non-finite objective at the initial hyperparameters")
    cache: dict[bytes, LaplaceFit] = {theta0.tobytes(): first}
    count = [0]

    def negobj(theta):
        key = theta.tobytes()
        fit = cache.get(key)
        if fit is None:
            count[0] += 1
            try:
                fit = model.fit(theta)
            except (np.linalg.LinAlgError, ConvergenceError, FloatingPointError):
                return np.inf, np.zeros_like(theta)
            cache.clear()
            cache[key] = fit
        return -fit.log_posterior, -fit.log_posterior_grad

    best = first
    theta = theta0
    iters = 0
    # restarts recover from line-search stalls caused by the inexact inner solve
    for _ in range(3):
        res = scipy.optimize.minimize(negobj, theta, jac=True, method="BFGS",
                                      options={"gtol": gtol, "maxiter": max_iter - iters})
        iters += int(res.nit)
        theta = np.asarray(res.x, dtype=float)
        fit = model.fit(theta)
        if fit.log_posterior >= best.log_posterior:
            best = fit
        if np.max(np.abs(best.log_posterior_grad)) <= gtol or iters >= max_iter:
            break
        theta = best.theta
    gnorm = float(np.max(np.abs(best.log_posterior_grad)))
    if gnorm > gtol:
        if iters >= max_iter:
            raise ConvergenceError(f"hyperparameter optimization did not converge in "
                                   f"{max_iter} iterations (gradient {gnorm:.2e})")
        warnings.warn(f"MAP gradient norm {gnorm:.2e} above tolerance", RuntimeWarning,
                      stacklevel=2)
    return MapResult(best.theta, best, best.log_posterior, gnorm, iters, count[0] + 1,
                     first.log_posterior)


def numerical_hessian(grad_fn, theta, step: float = 1e-3) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    H = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = step
        H[:, j] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * step)
    return 0.5 * (H + H.T)


@dataclass
class CcdDesign:
    center: np.ndarray
    z: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    transform: np.ndarray
    f0: float

    @property
    def size(self) -> int:
        return len(self.points)


def ccd_design(center, hessian, f0: float = 1.1) -> CcdDesign:
    """Central composite design in whitened coordinates of ``-hessian``.

    Axial points sit at ``+-f0 sqrt(k)`` and the full factorial corners at
    ``f0 (+-1, ..., +-1)``, all on the sphere of radius ``f0 sqrt(k)``.  Base
    weights make the design integrate standard normal moments up to second
    order exactly.
    """
    center = np.asarray(center, dtype=float)
    k = center.size
    vals, vecs = np.linalg.eigh(-np.asarray(hessian, dtype=float))
    if np.any(vals <= 0):
        raise np.linalg.LinAlgError("negative Hessian at the mode is not positive definite")
    T = vecs / np.sqrt(vals)
    radius = f0 * np.sqrt(k)
    axial = np.vstack([radius * np.eye(k), -radius * np.eye(k)])
    corners = f0 * np.array(list(itertools.product((1.0, -1.0), repeat=k)))
    # in one dimension the corners coincide with the axial points
    parts = [np.zeros((1, k)), axial] + ([corners] if k > 1 else [])
    z = np.vstack(parts)
    n_outer = len(z) - 1
    w = np.full(len(z), 1.0 / (f0**2 * n_outer))
    w[0] = 1.0 - 1.0 / f0**2
    return CcdDesign(center, z, center + z @ T.T, w, T, f0)


@dataclass
class CcdResult:
    design: CcdDesign
    weights: np.ndarray
    fits: list = field(repr=False)
    posterior: DensityPosterior | None = None
    warnings: list[str] = field(default_factory=list)


def ccd_weights(design: CcdDesign, log_post) -> np.ndarray:
    """Design weights times the ratio of posterior to its Gaussian fit."""
    log_post = np.asarray(log_post, dtype=float)
    lw = np.log(design.weights) + log_post + 0.5 * np.sum(design.z**2, axis=1)
    lw -= lw.max()
    w = np.exp(lw)
    return w / w.sum()


def mix_posteriors(posts, weights) -> DensityPosterior:
    """Stack per-point sample sets, scaling each set's weights by its mixture weight."""
    probs = np.vstack([p.probs for p in posts])
    w = np.concatenate([wj * p.weights / p.weights.sum() for p, wj in zip(posts, weights)])
    notes = [n for p in posts for n in p.warnings]
    ess = float(w.sum() ** 2 / np.sum(w**2))
    return DensityPosterior(probs, w / w.sum(), posts[0].cell_volume, posts[0].n_blocks,
                            None, ess, notes)


def ccd_integrate(model: DensityModel, map_fit: LaplaceFit, predictor=None, *,
                  step: float = 1e-3, f0: float = 1.1, hessian=None,
                  log_posterior=None) -> CcdResult:
    """Integrate a predictor over hyperparameters with a CCD around the MAP.

    ``predictor(fit)`` returns a :class:`DensityPosterior` or an array; the
    results are mixed with the normalized design weights.  ``hessian`` and
    ``log_posterior`` override the finite-difference Hessian and the Laplace
    log marginal posterior (both functions of ``theta``).
    """
    theta = map_fit.theta
    if hessian is None:
        hessian = numerical_hessian(lambda t: model.fit(t, a0=map_fit.mode.a).log_posterior_grad,
                                    theta, step)
    try:
        design = ccd_design(theta, hessian, f0)
    except np.linalg.LinAlgError as exc:
        msg = f"CCD skipped, using MAP only: {exc}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        design = CcdDesign(theta, np.zeros((1, theta.size)), theta[None, :], np.ones(1),
                           np.zeros((theta.size, theta.size)), f0)
        post = predictor(map_fit) if predictor is not None else None
        return CcdResult(design, np.ones(1), [map_fit], post, [msg])
    fits = [map_fit] + [model.fit(p, a0=map_fit.mode.a) for p in design.points[1:]]
    if log_posterior is None:
        lp = [f.log_posterior for f in fits]
    else:
        lp = [log_posterior(p) for p in design.points]
    w = ccd_weights(design, lp)
    post = None
    if predictor is not None:
        preds = [predictor(f) for f in fits]
        if isinstance(preds[0], DensityPosterior):
            post = mix_posteriors(preds, w)
        else:
            post = np.tensordot(w, np.asarray(preds), axes=1)
    return CcdResult(design, w, fits, post, [])
