import itertools

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from conftest import fd_grad
from lgpdens.grid import bin_data, build_grid
from lgpdens.kernel import prior_cov
from lgpdens.laplace import DenseCovariance, find_mode, log_marginal_and_grad
from lgpdens.likelihood import GridLikelihood
from lgpdens.model import DensityModel


def quadrature_log_evidence(C, y, f_hat, Sigma, npts, half=10.0):
    """Tensor-grid quadrature of log int N(f|0,C) p(y|f) df in Laplace-whitened coordinates."""
    m = len(y)
    L = np.linalg.cholesky(Sigma)
    z = np.linspace(-half, half, npts)
    Z = np.array(list(itertools.product(z, repeat=m)))
    F = f_hat + Z @ L.T
    lp = (multivariate_normal(np.zeros(m), C).logpdf(F) + F @ y
          - y.sum() * logsumexp(F, axis=1))
    return logsumexp(lp) + m * np.log(z[1] - z[0]) + np.log(np.diag(L)).sum()


def test_single_cell_mode_is_prior_mean():
    lik = GridLikelihood(np.array([7.0]))
    cov = DenseCovariance(prior_cov(np.array([[2.0]])))
    mode = find_mode(cov, lik, a0=np.array([0.3]))
    assert abs(mode.f[0]) < 1e-12


def test_empty_data_mode_and_marginal():
    g = build_grid([0, 1], 20)
    md = DensityModel(g, np.zeros(20))
    fit = md.fit([0.0, 0.0], warm=False)
    assert np.all(fit.f_hat == 0) and fit.mode.iterations == 1
    assert fit.log_marginal == 0.0


def test_symmetric_data_symmetric_density():
    g = build_grid([-1, 1], 30)
    y = np.zeros(30)
    y[[3, 10, 12, 14]] = [1, 4, 2, 3]
    y = y + y[::-1]
    md = DensityModel(g, y)
    fit = md.fit([0.5, -0.7])
    p = np.exp(fit.f_hat - logsumexp(fit.f_hat))
    assert np.max(np.abs(p - p[::-1])) <= 1e-8


def test_objective_monotone_and_unique(mix_t4_100):
    _, g, y = mix_t4_100
    md = DensityModel(g, y)
    fit = md.fit([1.0, -0.5], warm=False)
    tr = np.array(fit.mode.trace)
    assert np.all(np.diff(tr) >= -1e-12 * np.abs(tr[1:]))
    assert fit.mode.stationarity <= 1e-6
    rng = np.random.default_rng(0)
    for _ in range(2):
        a0 = fit.cov.prior.solve(3.0 * rng.normal(size=g.m))
        other = md.fit([1.0, -0.5], a0=a0)
        assert np.max(np.abs(other.f_hat - fit.f_hat)) <= 1e-6


def test_fft_path_matches_dense(mix_t4_100):
    ds, _, _ = mix_t4_100
    g = build_grid([ds.points.min() - 1, ds.points.max() + 1], 512)
    y = bin_data(g, ds.points).counts
    a = DensityModel(g, y).fit([1.5, 0.0])
    b = DensityModel(g, y, method="fft").fit([1.5, 0.0])
    assert np.max(np.abs(a.f_hat - b.f_hat)) <= 1e-6
    assert a.log_marginal == pytest.approx(b.log_marginal, abs=1e-6)


@pytest.mark.parametrize("y", [[5, 5], [7, 3], [3, 1]])
def test_marginal_against_quadrature_m2(y):
    g = build_grid([0, 1], 2)
    y = np.array(y, float)
    md = DensityModel(g, y, basis=False)
    fit = md.fit([0.0, 0.0])
    q = quadrature_log_evidence(fit.cov.prior.matrix, y, fit.f_hat,
                                fit.gaussian().covariance(), 201)
    assert abs(fit.log_marginal - q) <= 0.05


def test_marginal_gradient_fd():
    rng = np.random.default_rng(2)
    g = build_grid([0, 1], 25)
    y = rng.poisson(np.exp(2 * np.sin(np.linspace(0, 3, 25))))
    theta = np.array([0.4, -0.6])
    md = DensityModel(g, y)
    opts = {"obj_tol": 1e-14, "grad_tol": 1e-9}
    md.newton_options = opts
    fit = md.fit(theta)
    fd = fd_grad(lambda t: md.fit(t).log_marginal, theta, 1e-4)
    np.testing.assert_allclose(fit.grad, fd, rtol=1e-4)


def test_marginal_gradient_regression_fd():
    rng = np.random.default_rng(3)
    g = build_grid([(0, 1), (0, 1)], (4, 6))
    y = rng.poisson(1.0, g.m)
    y[6:12] = 0
    md = DensityModel(g, y, regression=True)
    md.newton_options = {"obj_tol": 1e-14, "grad_tol": 1e-9}
    theta = np.array([0.2, 0.1, -0.3])
    fit = md.fit(theta)
    fd = fd_grad(lambda t: md.fit(t).log_marginal, theta, 1e-4)
    np.testing.assert_allclose(fit.grad, fd, rtol=1e-4)


def test_mismatched_theta_lowers_marginal(mix_t4_100):
    from lgpdens.hyper import map_optimize
    _, g, y = mix_t4_100
    md = DensityModel(g, y)
    res = map_optimize(md)
    bad = md.fit(res.theta + np.array([-6.0, 3.0]))
    assert bad.log_marginal < res.fit.log_marginal


def test_dense_marginal_without_gradients(mix_t4_100):
    _, g, y = mix_t4_100
    md = DensityModel(g, y)
    fit = md.fit([0.0, 0.0])
    cov, _ = md.covariance([0.0, 0.0])
    r = log_marginal_and_grad(fit.mode, cov.prior, md.lik)
    assert r.log_marginal == pytest.approx(fit.log_marginal)
