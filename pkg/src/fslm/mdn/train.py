"""Negative-log-likelihood training for the conditional mixture network.

The loss and its analytic gradient are written out by hand (responsibilities
for the weights, triangular solves for means and factors) so the whole stack
can be verified against finite differences.  Training is plain Adam with
mini-batches, a held-out validation split for early stopping, and full
determinism from a single seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fslm._nnet import (
    Adam,
    flatten_params,
    init_mlp,
    mlp_backward,
    mlp_forward,
    unflatten_params,
)
from fslm._util import rng_for
from fslm.mdn.mixture import LOG_2PI, solve_lower_batched, solve_upper_from_lower_batched
from fslm.mdn.model import MdnModel, head_dim

#: Global count of completed training runs; feature-ranking code paths that
#: promise "no retraining" assert this does not move.
TRAIN_CALLS = 0


class TrainingDivergedError(RuntimeError):
    """Loss turned non-finite during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    n_components: int = 10
    hidden_sizes: tuple[int, ...] = (50, 50, 50)
    diagonal: bool = False
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 400
    val_fraction: float = 0.1
    patience: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.hidden_sizes:
            raise ValueError("at least one hidden layer is required")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.val_fraction <= 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class TrainResult:
    model: MdnModel
    train_curve: np.ndarray
    val_curve: np.ndarray
    best_epoch: int
    epochs_run: int
    config: TrainConfig = field(repr=False)


def _unpack_head(out, k, d, diagonal):
    b = out.shape[0]
    logits = out[:, :k]
    means = out[:, k : k + k * d].reshape(b, k, d)
    log_diag = out[:, k + k * d : k + 2 * k * d].reshape(b, k, d)
    off = out[:, k + 2 * k * d :].reshape(b, k, -1)
    chol = np.zeros((b, k, d, d))
    idx = np.arange(d)
    chol[:, :, idx, idx] = np.exp(log_diag)
    if not diagonal and d > 1:
        rows, cols = np.tril_indices(d, k=-1)
        chol[:, :, rows, cols] = off
    return logits, means, log_diag, chol


def mdn_nll(
    params: list[np.ndarray],
    thetas_std: np.ndarray,
    x_std: np.ndarray,
    n_components: int,
    diagonal: bool,
) -> float:
    """Mean negative log-likelihood in standardized space."""
    d = x_std.shape[1]
    out, _ = mlp_forward(params, thetas_std)
    logits, means, log_diag, chol = _unpack_head(out, n_components, d, diagonal)
    log_pi = logits - _logsumexp(logits)
    z = solve_lower_batched(chol, x_std[:, None, :] - means)
    comp = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_diag, axis=-1) - 0.5 * d * LOG_2PI
    s = log_pi + comp
    peak = s.max(axis=1, keepdims=True)
    ll = np.log(np.sum(np.exp(s - peak), axis=1)) + peak[:, 0]
    return float(-np.mean(ll))


def mdn_nll_grads(
    params: list[np.ndarray],
    thetas_std: np.ndarray,
    x_std: np.ndarray,
    n_components: int,
    diagonal: bool,
) -> tuple[float, list[np.ndarray]]:
    """Loss plus analytic gradients for every parameter array.

    Per sample and component, with residual r = x - mu, factor L, and
    z = L^-1 r, u = L^-T z:

      d logN / d mu        =  u
      d logN / d L         =  tril(u z^T) - diag(1 / diag(L))
      d loss / d logits    =  -(responsibility - mixture weight) / B

    The diagonal of L is exp-parameterized, which turns its gradient into
    ``u * z * diag(L) - 1``.
    """
    b, d = x_std.shape
    k = n_components
    out, caches = mlp_forward(params, thetas_std)
    logits, means, log_diag, chol = _unpack_head(out, k, d, diagonal)
    log_z = _logsumexp(logits)
    log_pi = logits - log_z
    pi = np.exp(log_pi)

    resid = x_std[:, None, :] - means
    z = solve_lower_batched(chol, resid)
    comp = -0.5 * np.sum(z * z, axis=-1) - np.sum(log_diag, axis=-1) - 0.5 * d * LOG_2PI
    s = log_pi + comp
    peak = s.max(axis=1, keepdims=True)
    ll = np.log(np.sum(np.exp(s - peak), axis=1)) + peak[:, 0]
    loss = float(-np.mean(ll))

    gamma = np.exp(s - ll[:, None])  # responsibilities, rows sum to 1
    u = solve_upper_from_lower_batched(chol, z)

    d_logits = -(gamma - pi) / b
    d_means = -(gamma[:, :, None] * u) / b
    diag = np.exp(log_diag)
    d_log_diag = -(gamma[:, :, None] * (u * z * diag - 1.0)) / b
    blocks = [d_logits.reshape(b, -1), d_means.reshape(b, -1), d_log_diag.reshape(b, -1)]
    if not diagonal and d > 1:
        rows, cols = np.tril_indices(d, k=-1)
        outer = u[:, :, :, None] * z[:, :, None, :]
        d_off = -(gamma[:, :, None] * outer[:, :, rows, cols]) / b
        blocks.append(d_off.reshape(b, -1))
    d_head = np.concatenate(blocks, axis=1)
    return loss, mlp_backward(params, caches, d_head)


def _standardization(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    # constant columns carry no information; unit scale keeps them harmless
    scale = np.where(scale < 1e-12, 1.0, scale)
    return mean, scale


def train(
    thetas: np.ndarray,
    xs: np.ndarray,
    config: TrainConfig = TrainConfig(),
    theta_names: tuple[str, ...] | None = None,
    feature_names: tuple[str, ...] | None = None,
) -> TrainResult:
    """Fit the density network; deterministic for a fixed config and data.

    Expects fully valid rows (no NaN/inf): invalid simulations are filtered
    upstream.  The validation split (last ``val_fraction`` of a seeded
    shuffle) drives early stopping: training stops once the validation loss
    has not improved for ``patience`` epochs, and the best-validation weights
    are returned.
    """
    global TRAIN_CALLS
    thetas = np.asarray(thetas, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if thetas.ndim != 2 or xs.ndim != 2 or thetas.shape[0] != xs.shape[0]:
        raise ValueError("thetas and xs must be paired 2-D arrays")
    if not (np.all(np.isfinite(thetas)) and np.all(np.isfinite(xs))):
        raise ValueError("training data must be fully valid (finite); "
                         "filter invalid simulations before training")
    n = thetas.shape[0]
    q, d = thetas.shape[1], xs.shape[1]
    if theta_names is None:
        theta_names = tuple(f"theta_{i}" for i in range(q))
    if feature_names is None:
        feature_names = tuple(f"x_{i}" for i in range(d))
    if len(theta_names) != q or len(feature_names) != d:
        raise ValueError("name tuples must match data dimensions")

    rng = rng_for(config.seed, "mdn-train")
    perm = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n)))
    if n_val >= n:
        raise ValueError("dataset too small for the requested validation fraction")
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    theta_mean, theta_scale = _standardization(thetas[train_idx])
    x_mean, x_scale = _standardization(xs[train_idx])
    th_std = (thetas - theta_mean) / theta_scale
    x_std = (xs - x_mean) / x_scale
    th_tr, x_tr = th_std[train_idx], x_std[train_idx]
    th_va, x_va = th_std[val_idx], x_std[val_idx]

    p = head_dim(config.n_components, d, config.diagonal)
    params = init_mlp(q, config.hidden_sizes, p, rng)
    # spread the initial component means so the mixture starts diverse
    means_bias = rng.normal(0.0, 0.5, size=config.n_components * d)
    params[-1][config.n_components : config.n_components * (1 + d)] = means_bias

    flat, shapes = flatten_params(params)
    adam = Adam(flat.size, learning_rate=config.learning_rate)
    n_train = train_idx.size
    best_val = np.inf
    best_flat = flat.copy()
    best_epoch = 0
    stale = 0
    train_curve: list[float] = []
    val_curve: list[float] = []

    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(n_train)
        epoch_losses = []
        for lo in range(0, n_train, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            params = unflatten_params(flat, shapes)
            loss, grads = mdn_nll_grads(
                params, th_tr[sel], x_tr[sel], config.n_components, config.diagonal
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}"
                )
            grad_flat, _ = flatten_params(grads)
            flat = adam.step(flat, grad_flat)
            epoch_losses.append(loss)
        params = unflatten_params(flat, shapes)
        val_nll = mdn_nll(params, th_va, x_va, config.n_components, config.diagonal)
        if not np.isfinite(val_nll):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        train_curve.append(float(np.mean(epoch_losses)))
        val_curve.append(val_nll)
        if val_nll < best_val:
            best_val = val_nll
            best_flat = flat.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model = MdnModel(
        theta_names=tuple(theta_names),
        feature_names=tuple(feature_names),
        hidden_sizes=tuple(config.hidden_sizes),
        n_components=config.n_components,
        diagonal=config.diagonal,
        params=unflatten_params(best_flat, shapes),
        theta_mean=theta_mean,
        theta_scale=theta_scale,
        x_mean=x_mean,
        x_scale=x_scale,
    )
    TRAIN_CALLS += 1
    return TrainResult(
        model=model,
        train_curve=np.array(train_curve),
        val_curve=np.array(val_curve),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        config=config,
    )


def _logsumexp(a: np.ndarray) -> np.ndarray:
    peak = a.max(axis=1, keepdims=True)
    return np.log(np.sum(np.exp(a - peak), axis=1, keepdims=True)) + peak
