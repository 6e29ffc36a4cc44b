"""Density-network training and inference on problems with known answers."""

import numpy as np
import pytest

from importlib import import_module

from fslm._nnet import flatten_params, init_mlp, unflatten_params
from fslm._util import rng_for
from fslm.mdn import MdnModel, TrainConfig, train
from fslm.mdn.model import head_dim
from fslm.mdn.train import mdn_nll, mdn_nll_grads

# the package re-exports the train() function under the submodule's name,
# so reach the module object itself through importlib
train_module = import_module("fslm.mdn.train")


def small_net(theta_dim=2, x_dim=2, k=3, hidden=(8, 8), seed=0):
    rng = rng_for("mdn-test", seed)
    params = init_mlp(theta_dim, hidden, head_dim(k, x_dim, diagonal=False), rng)
    thetas = rng.standard_normal((16, theta_dim))
    xs = rng.standard_normal((16, x_dim))
    return params, thetas, xs, k


def test_gradients_match_finite_differences():
    params, thetas, xs, k = small_net()
    loss, grads = mdn_nll_grads(params, thetas, xs, k, diagonal=False)
    assert loss == pytest.approx(mdn_nll(params, thetas, xs, k, False))
    flat, shapes = flatten_params(params)
    grad_flat, _ = flatten_params(grads)
    rng = rng_for("mdn-test", "probe")
    eps = 1e-6
    for idx in rng.choice(flat.size, size=80, replace=False):
        probe = flat.copy()
        probe[idx] += eps
        up = mdn_nll(unflatten_params(probe, shapes), thetas, xs, k, False)
        probe[idx] -= 2 * eps
        down = mdn_nll(unflatten_params(probe, shapes), thetas, xs, k, False)
        fd = (up - down) / (2 * eps)
        scale = max(abs(fd), abs(grad_flat[idx]), 1e-8)
        assert abs(grad_flat[idx] - fd) / scale < 1e-4


def test_training_is_deterministic_per_seed():
    rng = rng_for("mdn-test", "det")
    thetas = rng.uniform(-1, 1, size=(400, 2))
    xs = thetas @ np.array([[1.0, 0.2], [0.0, 1.0]]) + 0.3 * rng.standard_normal((400, 2))
    cfg = TrainConfig(n_components=2, hidden_sizes=(16,), max_epochs=8, seed=5)
    a = train(thetas, xs, cfg)
    b = train(thetas, xs, cfg)
    for pa, pb in zip(a.model.params, b.model.params):
        assert pa.tobytes() == pb.tobytes()
    assert a.best_epoch == b.best_epoch
    np.testing.assert_array_equal(a.val_curve, b.val_curve)


def test_training_recovers_linear_gaussian_conditional():
    # x | theta ~ N(A theta, diag(0.25, 0.09)): check conditional moments
    rng = rng_for("mdn-test", "lin")
    a_mat = np.array([[2.0, -1.0], [0.5, 1.5]])
    thetas = rng.uniform(-2, 2, size=(6000, 2))
    noise = rng.standard_normal((6000, 2)) * np.array([0.5, 0.3])
    xs = thetas @ a_mat.T + noise
    result = train(
        thetas, xs, TrainConfig(n_components=3, hidden_sizes=(32, 32), max_epochs=150, seed=1)
    )
    for theta_star in (np.array([1.0, 0.5]), np.array([-1.2, 1.4])):
        mix = result.model.forward(theta_star)
        want_mean = a_mat @ theta_star
        got_cov = np.zeros((2, 2))
        for w, mu, cov in zip(mix.weights, mix.means, mix.covs):
            got_cov += w * (cov + np.outer(mu - mix.mean(), mu - mix.mean()))
        np.testing.assert_allclose(mix.mean(), want_mean, atol=0.15)
        np.testing.assert_allclose(np.diag(got_cov), [0.25, 0.09], rtol=0.5)


def test_log_prob_consistent_with_forward():
    result = _tiny_trained()
    thetas = rng_for("mdn-test", "consist").uniform(-1, 1, size=(5, 2))
    xs = rng_for("mdn-test", "consist-x").standard_normal((5, 2))
    paired = result.model.log_prob(thetas, xs)
    per_point = [float(result.model.forward(t).log_prob(x)) for t, x in zip(thetas, xs)]
    np.testing.assert_allclose(paired, per_point, rtol=1e-9)


def test_standardization_is_transparent():
    # scaling features by a constant must shift log-densities by exactly
    # -log|c| per dimension once the model restandardizes
    rng = rng_for("mdn-test", "std")
    thetas = rng.uniform(-1, 1, size=(500, 2))
    xs = thetas + 0.2 * rng.standard_normal((500, 2))
    cfg = TrainConfig(n_components=2, hidden_sizes=(16,), max_epochs=10, seed=3)
    base = train(thetas, xs, cfg)
    scaled = train(thetas, 10.0 * xs, cfg)
    lp_base = base.model.log_prob(thetas[:5], xs[:5])
    lp_scaled = scaled.model.log_prob(thetas[:5], 10.0 * xs[:5])
    # same standardized data, so the fits are identical up to the Jacobian
    np.testing.assert_allclose(lp_scaled, lp_base - 2 * np.log(10.0), rtol=1e-7)


_CACHED = {}


def _tiny_trained():
    if "result" not in _CACHED:
        rng = rng_for("mdn-test", "tiny")
        thetas = rng.uniform(-1, 1, size=(500, 2))
        xs = thetas + 0.3 * rng.standard_normal((500, 2))
        _CACHED["result"] = train(
            thetas,
            xs,
            TrainConfig(n_components=2, hidden_sizes=(16,), max_epochs=10, seed=2),
            theta_names=("a", "b"),
            feature_names=("x", "y"),
        )
    return _CACHED["result"]


def test_save_load_round_trip_bitwise(tmp_path):
    result = _tiny_trained()
    p = tmp_path / "model.bin"
    result.model.save(p)
    loaded = MdnModel.load(p)
    assert loaded.theta_names == ("a", "b")
    assert loaded.feature_names == ("x", "y")
    assert loaded.n_components == result.model.n_components
    for a, b in zip(result.model.params, loaded.params):
        assert a.tobytes() == b.tobytes()
    for attr in ("theta_mean", "theta_scale", "x_mean", "x_scale"):
        assert getattr(result.model, attr).tobytes() == getattr(loaded, attr).tobytes()
    thetas = np.zeros((1, 2))
    xs = np.ones((1, 2))
    np.testing.assert_array_equal(
        result.model.log_prob(thetas, xs), loaded.log_prob(thetas, xs)
    )


def test_training_counter_increments():
    before = train_module.TRAIN_CALLS
    rng = rng_for("mdn-test", "count")
    thetas = rng.uniform(-1, 1, size=(100, 1))
    xs = thetas + 0.1 * rng.standard_normal((100, 1))
    train(thetas, xs, TrainConfig(n_components=1, hidden_sizes=(4,), max_epochs=2))
    assert train_module.TRAIN_CALLS == before + 1


def test_early_stopping_reports_best_epoch():
    result = _tiny_trained()
    assert 1 <= result.best_epoch <= result.epochs_run
    assert result.val_curve.shape == (result.epochs_run,)
    assert result.val_curve[result.best_epoch - 1] == result.val_curve.min()


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(n_components=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=0.9)
    with pytest.raises(ValueError):
        TrainConfig(hidden_sizes=())


def test_mismatched_rows_rejected():
    with pytest.raises(ValueError):
        train(np.zeros((10, 2)), np.zeros((9, 2)), TrainConfig(max_epochs=1))
