"""Gaussian-mixture algebra: the marginalization identity is checked against
numerical quadrature of the joint density, not against itself."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from fslm._util import rng_for
from fslm.mdn.mixture import GaussianMixture, marginal_logpdf_batch


def random_mixture(rng, k, d) -> GaussianMixture:
    weights = rng.dirichlet(np.ones(k) * 2.0)
    means = rng.uniform(-3, 3, size=(k, d))
    chol = np.zeros((k, d, d))
    for i in range(k):
        a = rng.standard_normal((d, d)) * 0.6
        chol[i] = np.linalg.cholesky(a @ a.T + np.diag(rng.uniform(0.3, 1.5, d)))
    return GaussianMixture.from_cholesky(weights, means, chol)


def quadrature_marginal_logpdf(mix, keep, x_keep, n_nodes=48):
    """Integrate the joint density over the dropped dimensions numerically.

    Per component the dropped-coordinate integrand is centered with the Schur
    complement (plain linear algebra, no mixture code) and integrated with a
    tensor Gauss-Legendre rule over a +-9 sigma box.
    """
    drop = [i for i in range(mix.dim) if i not in keep]
    keep = list(keep)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    total = 0.0
    for w, mu, cov in zip(mix.weights, mix.means, mix.covs):
        s_kk = cov[np.ix_(keep, keep)]
        s_dk = cov[np.ix_(drop, keep)]
        s_dd = cov[np.ix_(drop, drop)]
        solve = np.linalg.solve(s_kk, (x_keep - mu[keep]))
        center = mu[drop] + s_dk @ solve
        half = 9.0 * np.sqrt(np.diag(s_dd - s_dk @ np.linalg.solve(s_kk, s_dk.T)))
        axes = [center[j] + half[j] * nodes for j in range(len(drop))]
        wts = [half[j] * weights for j in range(len(drop))]
        grids = np.meshgrid(*axes, indexing="ij")
        pts_drop = np.stack([g.ravel() for g in grids], axis=1)
        full_pts = np.empty((pts_drop.shape[0], mix.dim))
        full_pts[:, keep] = x_keep
        full_pts[:, drop] = pts_drop
        dens = multivariate_normal(mean=mu, cov=cov).pdf(full_pts)
        # product of per-axis quadrature weights over the tensor grid
        wgrid = np.ones(pts_drop.shape[0])
        for wv in np.meshgrid(*wts, indexing="ij"):
            wgrid *= wv.ravel()
        total += w * float(dens @ wgrid)
    return np.log(total)


def test_marginal_matches_quadrature_spot_checks():
    rng = rng_for("mixture", "quad")
    for case in range(6):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(1, 5))
        mix = random_mixture(rng, k, d)
        n_keep = int(rng.integers(1, d))
        keep = tuple(sorted(rng.choice(d, size=n_keep, replace=False).tolist()))
        marg = mix.marginalize(keep)
        for _ in range(3):
            x = rng.uniform(-4, 4, size=len(keep))
            want = quadrature_marginal_logpdf(mix, keep, x)
            got = float(marg.log_prob(x))
            assert got == pytest.approx(want, rel=1e-8, abs=1e-10)


def test_marginalize_is_nested_consistent():
    rng = rng_for("mixture", "nested")
    mix = random_mixture(rng, 4, 4)
    one_shot = mix.marginalize((0, 2))
    # dropping 3 then 1 must equal dropping both at once, exactly
    stepwise = mix.marginalize((0, 1, 2)).marginalize((0, 2))
    np.testing.assert_array_equal(one_shot.weights, stepwise.weights)
    np.testing.assert_array_equal(one_shot.means, stepwise.means)
    np.testing.assert_array_equal(one_shot.covs, stepwise.covs)


def test_marginalize_full_set_is_identity():
    rng = rng_for("mixture", "ident")
    mix = random_mixture(rng, 3, 3)
    same = mix.marginalize((0, 1, 2))
    np.testing.assert_array_equal(same.means, mix.means)
    np.testing.assert_array_equal(same.covs, mix.covs)


def test_log_prob_matches_scipy():
    rng = rng_for("mixture", "scipy")
    mix = random_mixture(rng, 5, 3)
    pts = rng.uniform(-4, 4, size=(50, 3))
    want = np.zeros(50)
    for w, mu, cov in zip(mix.weights, mix.means, mix.covs):
        want += w * multivariate_normal(mean=mu, cov=cov).pdf(pts)
    np.testing.assert_allclose(mix.log_prob(pts), np.log(want), rtol=1e-10)


def test_single_point_and_batch_agree():
    rng = rng_for("mixture", "single")
    mix = random_mixture(rng, 2, 2)
    x = np.array([0.3, -1.2])
    assert mix.log_prob(x) == mix.log_prob(x[None, :])[0]


def test_sample_moments():
    rng = rng_for("mixture", "moments")
    mix = random_mixture(rng, 3, 2)
    draws = mix.sample(200_000, rng)
    np.testing.assert_allclose(draws.mean(axis=0), mix.mean(), atol=0.02)
    want_cov = np.zeros((2, 2))
    for w, mu, cov in zip(mix.weights, mix.means, mix.covs):
        want_cov += w * (cov + np.outer(mu, mu))
    want_cov -= np.outer(mix.mean(), mix.mean())
    np.testing.assert_allclose(np.cov(draws.T), want_cov, atol=0.05)


def test_sampling_deterministic_per_seed():
    rng_a = rng_for("mixture", "det")
    rng_b = rng_for("mixture", "det")
    mix = random_mixture(rng_for("mixture", "detmix"), 3, 2)
    np.testing.assert_array_equal(mix.sample(100, rng_a), mix.sample(100, rng_b))


def test_invalid_construction_rejected():
    good_cov = np.eye(2)[None, :, :]
    with pytest.raises(ValueError, match="sum to 1"):
        GaussianMixture(np.array([0.5]), np.zeros((1, 2)), good_cov)
    with pytest.raises(ValueError, match="symmetric"):
        cov = np.array([[[1.0, 0.5], [0.2, 1.0]]])
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), cov)
    with pytest.raises(ValueError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.eye(3)[None])


def test_keep_validation():
    mix = random_mixture(rng_for("mixture", "keepv"), 2, 3)
    with pytest.raises(ValueError):
        mix.marginalize(())
    with pytest.raises(ValueError):
        mix.marginalize((0, 0))
    with pytest.raises(ValueError):
        mix.marginalize((3,))


def test_marginal_logpdf_batch_matches_loop():
    rng = rng_for("mixture", "batchpdf")
    mixes = [random_mixture(rng, 3, 4) for _ in range(10)]
    keep = (0, 2)
    x = rng.uniform(-2, 2, size=2)
    log_weights = np.log(np.stack([m.weights for m in mixes]))
    means = np.stack([m.means for m in mixes])
    covs = np.stack([m.covs for m in mixes])
    got = marginal_logpdf_batch(log_weights, means, covs, keep, x)
    want = np.array([float(m.marginalize(keep).log_prob(x)) for m in mixes])
    np.testing.assert_allclose(got, want, rtol=1e-10)
