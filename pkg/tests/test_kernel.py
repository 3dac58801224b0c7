import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad
from lgpdens.grid import build_grid
from lgpdens.kernel import (BasisPrior, FactorizationError, HyperPrior, basis_matrix,
                            half_t_logpdf, hyper_log_prior, prior_cov, sqexp_cov,
                            sqexp_cov_and_grads)


def test_diagonal_and_closed_form():
    X = np.array([[0.0], [1.0]])
    K, _ = sqexp_cov_and_grads(X, [np.log(2.5), np.log(0.5)])
    np.testing.assert_allclose(np.diag(K), 2.5)
    K, _ = sqexp_cov_and_grads(X, [0.0, np.log(0.5)])
    assert K[0, 1] == pytest.approx(np.exp(-2.0))
    assert K[0, 1] == pytest.approx(0.13534, abs=1e-5)


def test_gradients_match_fd():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 2))
    theta = np.array([0.3, -0.2, 0.4])
    _, grads = sqexp_cov_and_grads(X, theta)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1e-6
        fd = (sqexp_cov(X, theta + e) - sqexp_cov(X, theta - e)) / 2e-6
        assert np.max(np.abs(fd - grads[j])) <= 1e-6 * np.max(np.abs(grads[j]))


def test_toeplitz_and_kronecker_structure():
    g = build_grid([0, 1], 9)
    K = sqexp_cov(g.normalized_centers, [0.0, -0.5])
    for k in range(9):
        d = np.diagonal(K, k)
        assert np.ptp(d) <= 1e-15
    g2 = build_grid([(0, 1), (0, 2)], (4, 5))
    K = sqexp_cov(g2.normalized_centers, [0.7, -0.3, 0.2])
    K1 = sqexp_cov(g2.normalized_axis(0)[:, None], [0.7, -0.3])
    K2 = sqexp_cov(g2.normalized_axis(1)[:, None], [0.0, 0.2])
    np.testing.assert_allclose(K, np.kron(K1, K2), rtol=1e-13, atol=0)
    assert np.all(K > 0) and np.all(K <= np.exp(0.7) * (1 + 1e-15))


def test_basis_rows():
    np.testing.assert_array_equal(basis_matrix(np.array([[2.0]])), [[2.0, 4.0]])
    np.testing.assert_array_equal(basis_matrix(np.array([[1.0, -1.0]])), [[1, 1, -1, 1, -1]])
    np.testing.assert_array_equal(basis_matrix(np.zeros((1, 2))), np.zeros((1, 5)))
    with pytest.raises(ValueError):
        basis_matrix(np.zeros((2, 3)))


def test_basis_prior_default_variance():
    b = BasisPrior.polynomial(np.zeros((3, 1)))
    np.testing.assert_array_equal(b.B, 100.0 * np.eye(2))


def test_prior_cov():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(10, 10))
    K = A @ A.T + np.eye(10)
    pc = prior_cov(K, BasisPrior(np.zeros((10, 2)), np.zeros((2, 2))), jitter=0)
    np.testing.assert_array_equal(pc.matrix, K)
    X = rng.normal(size=(10, 1))
    pc = prior_cov(K, BasisPrior.polynomial(X))
    assert np.max(np.abs(pc.matrix - pc.matrix.T)) == 0
    f = rng.normal(size=10)
    exact = f @ np.linalg.solve(pc.matrix, f)
    assert pc.quad_form(f) == pytest.approx(exact, rel=1e-10)


def test_prior_cov_jitter_escalation_and_failure():
    x = np.linspace(0, 1, 60)[:, None]
    K = sqexp_cov(x, [0.0, np.log(2.0)])      # numerically singular
    pc = prior_cov(K)
    assert pc.jitter >= 1e-8
    with pytest.raises(FactorizationError):
        prior_cov(-np.eye(3))


def test_half_cauchy_density():
    s = 3.0
    assert np.exp(half_t_logpdf(1e-300, s)) == pytest.approx(2 / (np.pi * s))
    x = np.linspace(0.01, 50, 200)
    assert np.all(np.diff(half_t_logpdf(x, s)) < 0)
    assert half_t_logpdf(-1.0, s) == -np.inf


@settings(max_examples=20, deadline=None)
@given(st.floats(-4, 4), st.floats(-3, 3), st.floats(-3, 3))
def test_hyper_prior_gradient(a, b, c):
    prior = HyperPrior.default(2)
    theta = np.array([a, b, c])
    _, g = hyper_log_prior(theta, prior)
    fd = fd_grad(lambda t: hyper_log_prior(t, prior)[0], theta, 1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_hyper_prior_is_density_in_log_space():
    from scipy.integrate import dblquad
    prior = HyperPrior.default(1)
    val, _ = dblquad(lambda l, t: np.exp(hyper_log_prior(np.array([t, l]), prior)[0]),
                     -80, 80, -40, 40)
    assert val == pytest.approx(1.0, abs=2e-3)
    assert HyperPrior.default(2).sigma_scale2 == 1000.0
    assert HyperPrior.default(1).sigma_scale2 == 10.0
