import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from lgpdens.grid import build_grid
from lgpdens.mcmc import (ChainConfig, ess, psrf, run_chain, run_single_chain,
                          rw_mh_hyper, scaled_mh_latents)
from lgpdens.model import DensityModel


@pytest.fixture(scope="module")
def two_cell():
    g = build_grid((0, 1), 2)
    md = DensityModel(g, np.array([4, 1]), basis=False)
    return md, md.fit([0.0, 0.0])


@pytest.mark.parametrize("kw", [dict(burn_in=10, meta_iters=10), dict(eps=0.0),
                                dict(eps=1.5), dict(latent_steps=0), dict(hyper_move="x")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ChainConfig(**kw)


def test_latent_chain_shifted_gaussian(two_cell):
    # log ratio making the target N(mu, Sigma) instead of N(0, Sigma)
    md, fit = two_cell
    Sigma = fit.gaussian().covariance()
    mu = np.sqrt(np.diag(Sigma))
    P = np.linalg.solve(Sigma, mu)

    def ratio(d):
        return d @ P - 0.5 * mu @ P

    rng = np.random.default_rng(0)
    chain, rate = scaled_mh_latents(fit.f_hat, fit, 0.7, 40000, rng, log_ratio=ratio)
    assert 0.1 < rate < 1.0
    delta = chain[2000:] - fit.f_hat
    sd = np.sqrt(np.diag(Sigma))
    np.testing.assert_allclose(delta.mean(axis=0), mu, atol=0.05 * sd.max())
    np.testing.assert_allclose(delta.std(axis=0), sd, rtol=0.05)


def test_hyper_random_walk_quantiles():
    target = stats.gamma(3.0)
    rng = np.random.default_rng(1)

    def log_target(t):
        # log of the Gamma density on the log scale
        return float(target.logpdf(np.exp(t[0])) + t[0])

    theta = np.array([1.0])
    current = None
    draws = []
    for _ in range(60000):
        theta, val, aux, _ = rw_mh_hyper(theta, log_target, 0.8, rng, current)
        current = (val, aux)
        draws.append(theta[0])
    draws = np.array(draws[2000:])
    # grid quadrature oracle for the quantiles of log X
    grid = np.linspace(-6, 4, 20001)
    cdf = integrate.cumulative_trapezoid(np.exp([log_target([t]) for t in grid]), grid,
                                         initial=0)
    cdf /= cdf[-1]
    for p in (0.1, 0.5, 0.9):
        assert abs(np.quantile(draws, p) - np.interp(p, cdf, grid)) < 0.05


def test_fixed_theta_chain_matches_quadrature(two_cell):
    md, fit = two_cell
    C = fit.cov.prior.matrix
    v = C[0, 0] + C[1, 1] - 2 * C[0, 1]

    def post(d):
        return stats.norm.pdf(d, scale=np.sqrt(v)) * expit(d) ** 4 * expit(-d)

    Z = integrate.quad(post, -40, 40)[0]
    exact = integrate.quad(lambda d: expit(d) * post(d), -40, 40)[0] / Z
    cfg = ChainConfig(latent_steps=20, meta_iters=4100, burn_in=100, hyper_move="fixed",
                      seed=3)
    res = run_single_chain(md, cfg, fit)
    p1 = res.densities[:, 0] * md.unit_volume
    assert abs(p1.mean() - exact) < 0.01
    assert np.all(res.thetas == fit.theta)


def test_run_chain_determinism_and_length(two_cell):
    md, fit = two_cell
    cfg = ChainConfig(latent_steps=5, meta_iters=60, burn_in=10, seed=9)
    a = run_chain(md, cfg, fit, n_chains=2)
    b = run_chain(md, cfg, fit, n_chains=2)
    assert len(a.chains) == 2
    for ca, cb in zip(a.chains, b.chains):
        assert ca.densities.shape == (50, 2) and ca.thetas.shape == (50, 2)
        np.testing.assert_array_equal(ca.densities, cb.densities)
        np.testing.assert_array_equal(ca.thetas, cb.thetas)
    assert not np.array_equal(a.chains[0].densities, a.chains[1].densities)
    np.testing.assert_allclose(a.densities.sum(axis=1) * md.grid.cell_volume, 1.0)


def test_psrf_identical_and_separated():
    x = np.random.default_rng(0).standard_normal(500)
    assert psrf(np.vstack([x, x, x])) == 1.0
    far = np.vstack([x, x + 5.0])
    assert psrf(far) > 2.0
    with pytest.raises(ValueError):
        psrf(x[None, :])


def test_ess_white_noise_and_ar1():
    rng = np.random.default_rng(4)
    white = rng.standard_normal(10000)
    assert 8500 < ess(white) < 11500
    phi, n = 0.9, 20000
    e = rng.standard_normal(n)
    ar = np.empty(n)
    ar[0] = e[0]
    for t in range(1, n):
        ar[t] = phi * ar[t - 1] + e[t]
    analytic = n * (1 - phi) / (1 + phi)
    assert 0.7 * analytic < ess(ar) < 1.3 * analytic
    chains = rng.standard_normal((4, 2000))
    assert 6500 < ess(chains) < 9500


def test_ess_constant_chain_warns():
    with pytest.warns(RuntimeWarning, match="constant"):
        assert ess(np.ones(100)) == 100.0
