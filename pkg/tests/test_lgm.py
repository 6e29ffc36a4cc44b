"""Linear-Gaussian model: everything here is checkable against closed forms."""

import numpy as np
import pytest

from fslm._util import rng_for
from fslm.sim.lgm import (
    LgmConfig,
    lgm_posterior_logpdf,
    lgm_posterior_sample,
    simulate_lgm,
)


@pytest.fixture(scope="module")
def cfg() -> LgmConfig:
    return LgmConfig()


def test_default_shapes(cfg):
    assert cfg.design.shape == (4, 3)
    assert cfg.feature_names == ("x_0", "x_1", "x_2", "x_3")
    assert cfg.prior.dim == 3


def test_simulator_moments(cfg):
    theta = np.array([1.0, -2.0, 0.5])
    xs = simulate_lgm(cfg, np.tile(theta, (40_000, 1)), rng_for("lgm", "mom"))
    np.testing.assert_allclose(
        xs.mean(axis=0), cfg.offset + cfg.design @ theta, atol=0.02
    )
    np.testing.assert_allclose(np.cov(xs.T), cfg.noise_std**2 * np.eye(4), atol=0.03)


def test_simulator_deterministic_per_seed(cfg):
    theta = np.zeros(3)
    a = simulate_lgm(cfg, theta, seed=11)
    b = simulate_lgm(cfg, theta, seed=11)
    c = simulate_lgm(cfg, theta, seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_last_feature_carries_no_signal(cfg):
    # the last design row is zero: x_3 is pure noise around the offset
    assert np.all(cfg.design[3] == 0.0)


def test_logpdf_matches_hand_computation(cfg):
    theta = np.array([0.5, 1.0, -1.0])
    x_obs = np.array([0.2, -0.3, 1.1, 0.7])
    keep = (0, 2)
    resid = x_obs[[0, 2]] - cfg.offset[[0, 2]] - cfg.design[[0, 2]] @ theta
    want = (
        -0.5 * float(resid @ resid) / cfg.noise_std**2
        - np.log(2.0 * np.pi * cfg.noise_std**2)
        - cfg.prior.log_volume
    )
    assert lgm_posterior_logpdf(cfg, x_obs, keep, theta) == pytest.approx(want)


def test_logpdf_outside_box_is_minus_inf(cfg):
    theta = cfg.prior.upper + 1.0
    assert np.isneginf(lgm_posterior_logpdf(cfg, np.zeros(4), (0, 1, 2, 3), theta))


def test_keep_validation(cfg):
    with pytest.raises(ValueError):
        lgm_posterior_logpdf(cfg, np.zeros(4), (), np.zeros(3))
    with pytest.raises(ValueError):
        lgm_posterior_logpdf(cfg, np.zeros(4), (1, 1), np.zeros(3))
    with pytest.raises(ValueError):
        lgm_posterior_logpdf(cfg, np.zeros(4), (4,), np.zeros(3))


def _grid_moments(cfg, x_obs, keep):
    """Independent oracle: posterior moments by dense tensor-grid quadrature."""
    axes = [np.linspace(lo, hi, 120) for lo, hi in zip(cfg.prior.lower, cfg.prior.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    logp = lgm_posterior_logpdf(cfg, x_obs, keep, pts)
    w = np.exp(logp - logp.max())
    w /= w.sum()
    mean = w @ pts
    centered = pts - mean
    cov = (centered * w[:, None]).T @ centered
    return mean, cov


@pytest.mark.parametrize("keep", [(0, 1, 2, 3), (1, 2), (0, 3)])
def test_rejection_sampler_matches_quadrature(cfg, keep):
    x_obs = np.array([0.8, -0.4, 0.9, 0.1])
    draws = lgm_posterior_sample(cfg, x_obs, keep, 40_000, seed=5)
    assert np.all(cfg.prior.contains(draws))
    want_mean, want_cov = _grid_moments(cfg, x_obs, keep)
    se = np.sqrt(np.diag(want_cov) / len(draws))
    np.testing.assert_allclose(draws.mean(axis=0), want_mean, atol=6 * se.max() + 1e-3)
    np.testing.assert_allclose(np.cov(draws.T), want_cov, atol=0.05 * want_cov.max())


def test_rejection_sampler_deterministic(cfg):
    x_obs = np.zeros(4)
    a = lgm_posterior_sample(cfg, x_obs, (0, 1), 50, seed=2)
    b = lgm_posterior_sample(cfg, x_obs, (0, 1), 50, seed=2)
    np.testing.assert_array_equal(a, b)


def test_dropping_informative_feature_widens_posterior(cfg):
    # x_0 is the only feature reading theta_0: dropping it returns theta_0
    # to its prior marginal
    x_obs = np.array([2.0, 0.0, 0.0, 0.0])
    full = lgm_posterior_sample(cfg, x_obs, (0, 1, 2, 3), 20_000, seed=9)
    reduced = lgm_posterior_sample(cfg, x_obs, (1, 2, 3), 20_000, seed=9)
    iqr = lambda s: np.percentile(s, 75, axis=0) - np.percentile(s, 25, axis=0)
    ratio = iqr(reduced)[0] / iqr(full)[0]
    prior_over_full = cfg.prior.iqr()[0] / iqr(full)[0]
    assert ratio == pytest.approx(prior_over_full, rel=0.05)
    assert ratio > 2.0
