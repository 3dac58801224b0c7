"""MCMC reference sampler for the latent density and its hyperparameters.

Latents move by an autoregressive (preconditioned Crank-Nicolson) proposal
around the Laplace mode, so the Metropolis-Hastings ratio only involves the
likelihood's Taylor remainder.  Hyperparameters move by random-walk Metropolis
in log space, either jointly with the whitened latents (default; mixes far
better than conditioning on ``f``) or conditionally on fixed ``f``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .hyper import numerical_hessian
from .kernel import hyper_log_prior
from .model import DensityModel, LaplaceFit
from .sampling import DensityPosterior, _block_softmax

log = logging.getLogger(__name__)

HYPER_MOVES = ("joint", "centered", "fixed")


@dataclass
class ChainConfig:
    latent_steps: int = 100
    meta_iters: int = 5100
    burn_in: int = 100
    eps: float = 0.5
    hyper_step: float | None = None
    seed: int | None = None
    target_latent: float = 0.3
    target_hyper: float = 0.25
    hyper_move: str = "joint"

    def __post_init__(self):
        if not 0 <= self.burn_in < self.meta_iters:
            raise ValueError("burn-in must be smaller than the number of meta-iterations")
        if not 0 < self.eps <= 1:
            raise ValueError("latent proposal scale must lie in (0, 1]")
        if self.latent_steps < 1:
            raise ValueError("need at least one latent step per meta-iteration")
        if self.hyper_move not in HYPER_MOVES:
            raise ValueError(f"unknown hyper move {self.hyper_move!r}")


def scaled_mh_latents(f, fit: LaplaceFit, eps: float, steps: int, rng: np.random.Generator,
                      log_ratio=None):
    """Autoregressive Metropolis-Hastings around the Laplace mode.

    Proposals ``f' = f_hat + sqrt(1-eps^2)(f - f_hat) + eps zeta`` with
    ``zeta ~ N(0, Sigma)`` leave the Laplace Gaussian invariant, so the
    acceptance ratio reduces to ``log_ratio(delta)``: the log ratio of the
    exact posterior to the Gaussian (the likelihood's Taylor remainder by
    default).  Returns the ``steps x m`` chain and the acceptance rate.
    """
    sampler = fit.sampler()
    ratio = log_ratio or (lambda d: sampler.remainder(d))
    gauss = fit.gaussian()
    f_hat = fit.f_hat
    delta = np.asarray(f, dtype=float) - f_hat
    cur = float(np.atleast_1d(ratio(delta[None, :]))[0])
    zetas = gauss.draw(rng, steps)
    logu = np.log(rng.random(steps))
    rho = np.sqrt(1.0 - eps * eps)
    chain = np.empty((steps, f_hat.size))
    acc = 0
    for i in range(steps):
        prop = rho * delta + eps * zetas[i]
        new = float(np.atleast_1d(ratio(prop[None, :]))[0])
        if logu[i] < new - cur:
            delta, cur = prop, new
            acc += 1
        chain[i] = f_hat + delta
    return chain, acc / steps


def rw_mh_hyper(theta, log_target, step, rng: np.random.Generator, current=None):
    """One Gaussian random-walk step in log hyperparameter space.

    ``step`` is a scalar or a Cholesky factor of the proposal covariance.  The
    proposal is symmetric so the acceptance ratio uses the target ratio only.
    ``log_target`` may return a float or a ``(float, aux)`` pair.  Returns
    ``(theta, log_target_value, aux, accepted)``.
    """
    theta = np.asarray(theta, dtype=float)

    def evaluate(t):
        out = log_target(t)
        return out if isinstance(out, tuple) else (out, None)

    cur, cur_aux = evaluate(theta) if current is None else current
    xi = rng.standard_normal(theta.size)
    step = np.asarray(step, dtype=float)
    prop = theta + (step @ xi if step.ndim == 2 else step * xi)
    logu = np.log(rng.random())
    try:
        new, aux = evaluate(prop)
    except (np.linalg.LinAlgError, ArithmeticError, RuntimeError):
        return theta, cur, cur_aux, False
    if np.isfinite(new) and logu < new - cur:
        return prop, new, aux, True
    return theta, cur, cur_aux, False


def centered_hyper_target(model: DensityModel, f):
    """``log N(f | 0, C(theta)) + log p(theta)`` for fixed latents ``f``."""
    f = np.asarray(f, dtype=float)

    def target(theta):
        cov, _ = model.covariance(theta, with_grads=False)
        prior = cov.prior
        lp, _ = hyper_log_prior(theta, model.prior)
        return float(-0.5 * prior.quad_form(f) - 0.5 * prior.logdet()
                     - 0.5 * f.size * np.log(2 * np.pi) + lp)

    return target


@dataclass
class ChainResult:
    densities: np.ndarray = field(repr=False)
    thetas: np.ndarray = field(repr=False)
    latent_accept: float
    hyper_accept: float
    eps: float
    hyper_scale: float


def _adapt(log_scale, rate, target, t):
    return log_scale + (rate - target) / np.sqrt(t + 1.0)


def run_single_chain(model: DensityModel, config: ChainConfig, map_fit: LaplaceFit,
                     proposal_chol=None, seed=None) -> ChainResult:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    fit = map_fit
    gauss = fit.gaussian()
    if not hasattr(gauss, "transform"):
        raise NotImplementedError("the MCMC sampler needs a dense Gaussian factor")
    k = fit.theta.size
    if proposal_chol is None:
        proposal_chol = 0.3 * np.eye(k)
    m = fit.f_hat.size
    z = rng.standard_normal(m)
    theta = fit.theta.copy()

    def state(fit_):
        delta_ = fit_.gaussian().transform(z)
        return delta_, float(fit_.model.lik.remainder_at(fit_.f_hat)(delta_)[0])

    delta, r = state(fit)
    log_eps = np.log(config.eps)
    log_scale = 0.0
    keep = config.meta_iters - config.burn_in
    dens = np.empty((keep, m))
    thetas = np.empty((keep, k))
    lat_acc = hyp_acc = 0.0
    for it in range(config.meta_iters):
        eps = float(min(np.exp(log_eps), 1.0))
        rho = np.sqrt(1 - eps * eps)
        remainder = model.lik.remainder_at(fit.f_hat)
        xi = rng.standard_normal((config.latent_steps, m))
        zeta = fit.gaussian().transform(xi.T).T
        logu = np.log(rng.random(config.latent_steps))
        acc = 0
        for i in range(config.latent_steps):
            d_new = rho * delta + eps * zeta[i]
            r_new = float(remainder(d_new)[0])
            if logu[i] < r_new - r:
                z, delta, r = rho * z + eps * xi[i], d_new, r_new
                acc += 1
        rate = acc / config.latent_steps

        accepted = False
        if config.hyper_move == "joint":
            step = np.exp(log_scale) * proposal_chol
            prop = theta + step @ rng.standard_normal(k)
            lu = np.log(rng.random())
            try:
                fit_new = model.fit(prop, with_grad=False, a0=fit.mode.a)
                d_new, r_new = state(fit_new)
                diff = (fit_new.log_posterior + r_new) - (fit.log_posterior + r)
                if np.isfinite(diff) and lu < diff:
                    theta, fit, delta, r = prop, fit_new, d_new, r_new
                    accepted = True
            except (np.linalg.LinAlgError, ArithmeticError, RuntimeError):
                pass
        elif config.hyper_move == "centered":
            f = fit.f_hat + delta
            step = np.exp(log_scale) * proposal_chol
            theta_new, _, _, accepted = rw_mh_hyper(theta, centered_hyper_target(model, f),
                                                    step, rng)
            if accepted:
                theta = theta_new
                fit = model.fit(theta, with_grad=False, a0=fit.mode.a)
                z = scipy.linalg.solve_triangular(fit.gaussian().L_C, f - fit.f_hat, lower=True)
                z = fit.gaussian().L_B.T @ z
                delta, r = state(fit)

        if it < config.burn_in:
            log_eps = min(_adapt(log_eps, rate, config.target_latent, it), 0.0)
            log_scale = _adapt(log_scale, float(accepted), config.target_hyper, it)
        else:
            j = it - config.burn_in
            dens[j] = _block_softmax((fit.f_hat + delta)[None, :], model.lik.n_blocks)[0]
            thetas[j] = theta
            lat_acc += rate
            hyp_acc += float(accepted)
    return ChainResult(dens / model.unit_volume, thetas, lat_acc / keep, hyp_acc / keep,
                       float(min(np.exp(log_eps), 1.0)), float(np.exp(log_scale)))


@dataclass
class McmcResult:
    chains: list = field(repr=False)
    psrf: dict
    ess: dict
    cell_volume: float

    @property
    def densities(self) -> np.ndarray:
        return np.vstack([c.densities for c in self.chains])

    @property
    def mean(self) -> np.ndarray:
        return self.densities.mean(axis=0)

    def posterior(self) -> DensityPosterior:
        d = self.densities
        return DensityPosterior(d * self.cell_volume, np.full(len(d), 1.0 / len(d)),
                                self.cell_volume)


def hyper_proposal(model: DensityModel, map_fit: LaplaceFit, step: float = 1e-3):
    """Cholesky factor of ``2.38^2/k`` times the inverse negative Hessian at the MAP."""
    k = map_fit.theta.size
    try:
        H = numerical_hessian(lambda t: model.fit(t, a0=map_fit.mode.a).log_posterior_grad,
                              map_fit.theta, step)
        return np.linalg.cholesky(np.linalg.inv(-H)) * (2.38 / np.sqrt(k))
    except np.linalg.LinAlgError:
        return 0.3 * np.eye(k)


def run_chain(model: DensityModel, config: ChainConfig, map_fit: LaplaceFit,
              n_chains: int = 1) -> McmcResult:
    """Run ``n_chains`` independent chains from the MAP hyperparameters."""
    if config.hyper_step is None:
        chol = hyper_proposal(model, map_fit)
    else:
        chol = config.hyper_step * np.eye(map_fit.theta.size)
    seeds = np.random.SeedSequence(config.seed).spawn(n_chains)
    chains = []
    for s in seeds:
        chains.append(run_single_chain(model, config, map_fit, chol, np.random.default_rng(s)))
        log.info("chain done: latent acc %.3f hyper acc %.3f", chains[-1].latent_accept,
                 chains[-1].hyper_accept)
    psrf_v, ess_v = diagnostics(chains, include_theta=config.hyper_move != "fixed")
    return McmcResult(chains, psrf_v, ess_v, model.unit_volume)


def _summaries(chains, include_theta: bool = True) -> dict[str, np.ndarray]:
    """Scalar summaries per chain: hyperparameters and log density at high-density cells."""
    out = {}
    if include_theta:
        th = np.stack([c.thetas for c in chains])            # c x n x k
        for j in range(th.shape[2]):
            out[f"theta{j}"] = th[:, :, j]
    d = np.stack([c.densities for c in chains])
    mean = d.mean(axis=(0, 1))
    for i in np.argsort(mean)[::-1][:5]:
        out[f"logdens{int(i)}"] = np.log(d[:, :, i])
    return out


def diagnostics(chains, include_theta: bool = True) -> tuple[dict, dict]:
    """PSRF and ESS per scalar summary of a list of :class:`ChainResult`."""
    psrf_v, ess_v = {}, {}
    for name, x in _summaries(chains, include_theta).items():
        psrf_v[name] = psrf(x) if x.shape[0] >= 2 else float("nan")
        ess_v[name] = ess(x)
    return psrf_v, ess_v


def psrf(chains) -> float:
    """Potential scale reduction ``sqrt((W + B/n) / W)`` over ``c x n`` draws."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PSRF needs at least two chains")
    n = x.shape[1]
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    B = float(n * np.var(x.mean(axis=1), ddof=1))
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    return float(np.sqrt((W + B / n) / W))


def _autocov(x):
    n = x.size
    xc = x - x.mean()
    size = 2 * n
    F = np.fft.rfft(xc, size)
    return np.fft.irfft(F * np.conj(F), size)[:n] / n


def ess(chains) -> float:
    """Effective sample size with Geyer's initial monotone sequence.

    Accepts one chain or a ``c x n`` array; several chains pool their
    autocorrelations through the between/within variance.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    c, n = x.shape
    total = c * n
    acov = np.array([_autocov(row) for row in x])
    W = float(np.mean(acov[:, 0])) * n / max(n - 1, 1)
    var_plus = W * (n - 1) / n
    if c > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    if var_plus <= 0:
        warnings.warn("constant chain: ESS set to the chain length", RuntimeWarning,
                      stacklevel=2)
        return float(total)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    return float(total / max(tau, 1.0 / np.log10(max(total, 10))))
