import warnings

import numpy as np
import pytest

from lgpdens.grid import build_grid
from lgpdens.mcmc import ChainConfig, run_chain
from lgpdens.evaluation import kl_divergence
from lgpdens.model import DensityModel
from lgpdens.sampling import (DensityPosterior, SplitConfig, density_summary,
                              importance_correction, kong_ess, occupied_range, rejection_tails,
                              sample_posterior, tails_decreasing, truncate_weights,
                              weighted_quantiles)


@pytest.fixture(scope="module")
def fit_small(mix_t4_100):
    _, g, y = mix_t4_100
    return DensityModel(g, y).fit([1.5, -0.5])


def test_samples_normalized_and_deterministic(fit_small):
    a = sample_posterior(fit_small, 500, seed=3)
    b = sample_posterior(fit_small, 500, seed=3)
    np.testing.assert_allclose(a.probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(a.probs >= 0)
    assert np.array_equal(a.probs, b.probs) and np.array_equal(a.weights, b.weights)
    c = fit_small.sample(500, seed=3)
    d = fit_small.sample(500, seed=3)
    assert np.array_equal(c.probs, d.probs) and np.array_equal(c.weights, d.weights)
    assert c.weights.sum() == pytest.approx(1.0) and np.all(c.weights >= 0)


def test_sampled_covariance_matches_laplace(fit_small):
    post = sample_posterior(fit_small, 20000, seed=0)
    emp = np.var(post.latents, axis=0)
    exact = np.diag(fit_small.gaussian().covariance())
    se = exact * np.sqrt(2.0 / 20000)
    assert np.all(np.abs(emp - exact) <= 5 * se)


def test_vanishing_prior_variance_gives_uniform():
    g = build_grid([0, 1], 40)
    y = np.zeros(40)
    y[[5, 6, 30]] = [4, 7, 2]
    md = DensityModel(g, y, basis=False)
    fit = md.fit([np.log(1e-8), 0.0])
    post = sample_posterior(fit, 2000, seed=1)
    assert np.max(np.abs(post.probs.mean(axis=0) - 1 / 40)) <= 1e-3


def test_identity_importance_is_uniform(fit_small):
    base = sample_posterior(fit_small, 1000, seed=2)
    cfg = SplitConfig(force_unit=True)
    post = importance_correction(fit_small, base, cfg,
                                 log_target=lambda d: np.zeros(np.atleast_2d(d).shape[0]))
    np.testing.assert_allclose(post.weights, 1 / 1000)
    assert post.ess == pytest.approx(1000)
    np.testing.assert_allclose(post.probs, base.probs)


def test_kong_ess_closed_form():
    assert kong_ess(np.array([1, 1, 1, 3]) / 6) == pytest.approx(3.0)
    assert kong_ess(np.ones(10)) == pytest.approx(10.0)


def test_truncation_caps_weights():
    w = np.r_[np.full(99, 1e-6), 1.0]
    t = truncate_weights(w)
    assert t.sum() == pytest.approx(1.0)
    capped = np.minimum(w / w.sum(), np.sqrt(100) / 100)
    np.testing.assert_allclose(t, capped / capped.sum())
    assert kong_ess(t) > kong_ess(w)


def test_low_ess_warns(fit_small):
    base = sample_posterior(fit_small, 400, seed=2)
    with pytest.warns(RuntimeWarning, match="effective sample size"):
        post = importance_correction(fit_small, base, SplitConfig(force_unit=True),
                                     log_target=lambda d: 5.0 * np.atleast_2d(d)[:, 0])
    assert post.ess < 200 and any("truncated" in w for w in post.warnings)


def test_importance_beats_plain_on_skewed_toy():
    g = build_grid([0, 1], 10)
    y = np.zeros(10)
    y[8:] = [1, 5]
    md = DensityModel(g, y)
    fit = md.fit([np.log(4.0), 0.0])
    cfg = ChainConfig(meta_iters=1500, burn_in=100, latent_steps=20, seed=0, hyper_move="fixed")
    mc = run_chain(md, cfg, fit, n_chains=2).mean
    w = g.cell_volume
    kl_is = kl_divergence(mc, fit.sample(8000, 1).mean, w)
    kl_plain = kl_divergence(mc, fit.sample(8000, 1, importance=False).mean, w)
    assert kl_is < kl_plain


def test_tail_rules():
    dec = np.array([[0.1, 0.2, 0.3, 0.2, 0.1, 0.05]])
    assert tails_decreasing(dec, 2, 3)[0]
    rising = np.array([[0.1, 0.2, 0.3, 0.2, 0.1, 0.15]])
    assert not tails_decreasing(rising, 2, 3)[0]
    assert not rejection_tails(rising[0], (2, 3))
    assert rejection_tails(rising[0], (2, 3), bounded=True)
    assert occupied_range([0, 0, 2, 0, 1, 0]) == (2, 4)


def test_rejection_sampling_and_cap(fit_small, mix_t4_100):
    _, _, y = mix_t4_100
    occ = occupied_range(y)
    post = fit_small.sample(300, seed=4, importance=False, occupied=occ)
    assert np.all(tails_decreasing(post.probs, *occ)) or post.warnings
    with pytest.warns(RuntimeWarning, match="tail rejection"):
        capped = fit_small.sample(50, seed=4, importance=False, occupied=(0, 0), max_attempts=2)
    assert capped.size == 50 and capped.warnings


def test_density_summary():
    P = np.full((5, 4), 0.25)
    post = DensityPosterior(P, np.full(5, 0.2), cell_volume=0.5)
    s = density_summary(post)
    np.testing.assert_allclose(s["quantiles"], 0.5)
    assert np.sum(s["mean"] * 0.5) == pytest.approx(1.0, abs=1e-10)


def test_quantiles_monotone(fit_small):
    post = fit_small.sample(1000, seed=0)
    q = weighted_quantiles(post.densities, post.weights, (0.025, 0.25, 0.5, 0.975))
    assert np.all(np.diff(q, axis=0) >= 0)
    assert np.sum(density_summary(post)["mean"]) * fit_small.model.unit_volume == pytest.approx(1.0, abs=1e-10)
