"""Simulation-validity models: restricted sampling and posterior calibration.

Some simulator parameterizations produce traces from which features cannot be
measured (for example, a neuron model that never spikes has no spike width).
Two models handle this:

* a validity classifier used to restrict the proposal distribution when
  generating training data, so the surrogate is fit mostly on measurable
  feature vectors;
* a calibration factor c(theta) = P(valid | theta), multiplied into the
  posterior to undo the bias introduced by training on the restricted
  proposal (Wang, Kulkarni & Verdu 2009 motivates correcting importance
  weights rather than discarding them).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from fslm._nnet import Adam, flatten_params, init_mlp, mlp_backward, mlp_forward, unflatten_params
from fslm._util import rng_for
from fslm.sim.prior import BoxPrior


class ValidityError(RuntimeError):
    """Raised when validity models cannot be fit or applied."""


def _standardize_stats(thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = thetas.mean(axis=0)
    scale = thetas.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


@dataclass
class ValidityClassifier:
    """MLP estimate of P(valid | theta), used to restrict proposals."""

    params: list[np.ndarray]
    theta_mean: np.ndarray
    theta_scale: np.ndarray
    holdout_accuracy: float

    def prob_valid(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        z = (thetas - self.theta_mean) / self.theta_scale
        logits, _ = mlp_forward(self.params, z)
        return expit(logits[:, 0])


def train_validity_classifier(
    thetas: np.ndarray,
    valid: np.ndarray,
    seed: int,
    hidden_sizes: tuple[int, ...] = (32, 32),
    max_epochs: int = 200,
    batch_size: int = 128,
    learning_rate: float = 1e-3,
    patience: int = 10,
) -> ValidityClassifier:
    """Fit the validity classifier by minibatch cross-entropy with early stop."""
    thetas = np.asarray(thetas, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if thetas.ndim != 2 or thetas.shape[0] != valid.shape[0]:
        raise ValueError("thetas must be (n, q) with one validity flag per row")
    n = thetas.shape[0]
    if n < 20:
        raise ValueError("need at least 20 examples to fit a validity classifier")
    if valid.all() or not valid.any():
        raise ValidityError(
            "cannot fit a validity classifier: all examples are in one class"
        )

    rng = rng_for(seed, "validity-classifier")
    perm = rng.permutation(n)
    n_val = max(int(round(0.2 * n)), 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    mean, scale = _standardize_stats(thetas[train_idx])
    z = (thetas - mean) / scale
    y = valid.astype(np.float64)

    params = init_mlp(thetas.shape[1], hidden_sizes, 1, rng)
    flat, shapes = flatten_params(params)
    opt = Adam(flat.size, learning_rate=learning_rate)

    def grad_at(idx: np.ndarray) -> np.ndarray:
        p = unflatten_params(flat, shapes)
        logits, caches = mlp_forward(p, z[idx])
        t = logits[:, 0]
        # Mean binary cross-entropy; d/dlogit = sigmoid(t) - y.
        d_logits = ((expit(t) - y[idx]) / idx.size)[:, None]
        return flatten_params(mlp_backward(p, caches, d_logits))[0]

    def val_loss() -> float:
        logits, _ = mlp_forward(unflatten_params(flat, shapes), z[val_idx])
        t = logits[:, 0]
        return float(np.mean(np.logaddexp(0.0, t) - y[val_idx] * t))

    best = (val_loss(), flat.copy())
    since_best = 0
    for _epoch in range(max_epochs):
        order = rng.permutation(train_idx.size)
        for lo in range(0, order.size, batch_size):
            idx = train_idx[order[lo : lo + batch_size]]
            flat = opt.step(flat, grad_at(idx))
        current = val_loss()
        if current < best[0] - 1e-6:
            best = (current, flat.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    flat = best[1]

    params = unflatten_params(flat, shapes)
    logits, _ = mlp_forward(params, z[val_idx])
    accuracy = float(np.mean((logits[:, 0] > 0) == valid[val_idx]))
    return ValidityClassifier(
        params=params,
        theta_mean=mean,
        theta_scale=scale,
        holdout_accuracy=accuracy,
    )


@dataclass(frozen=True)
class RestrictedPrior:
    """Box prior thinned by a validity classifier via rejection.

    Proposals are accepted with probability P(valid | theta), so the density
    is proportional to prior(theta) * c(theta).
    """

    prior: BoxPrior
    classifier: ValidityClassifier
    min_acceptance: float = 1e-4

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def lower(self) -> np.ndarray:
        return self.prior.lower

    @property
    def upper(self) -> np.ndarray:
        return self.prior.upper

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n, self.prior.dim))
        got = 0
        proposed = 0
        batch = max(4 * n, 256)
        while got < n:
            thetas = self.prior.sample(batch, rng)
            p = self.classifier.prob_valid(thetas)
            take = rng.uniform(size=batch) < p
            proposed += batch
            k = min(int(np.sum(take)), n - got)
            if k > 0:
                out[got : got + k] = thetas[take][:k]
                got += k
            if proposed >= 100 * batch and got / proposed < self.min_acceptance:
                raise ValidityError(
                    f"restricted prior acceptance {got / proposed:.2e} below "
                    f"{self.min_acceptance:.0e}; the classifier rejects nearly "
                    "the whole box"
                )
        return out


@dataclass
class CalibrationModel:
    """Logistic model of P(valid | theta) entering the posterior as log c."""

    weights: np.ndarray | None
    bias: float
    theta_mean: np.ndarray
    theta_scale: np.ndarray
    constant: float | None = field(default=None)

    def prob_valid(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        if self.constant is not None:
            return np.full(thetas.shape[0], self.constant)
        z = (thetas - self.theta_mean) / self.theta_scale
        return expit(z @ self.weights + self.bias)

    def log_prob_valid(self, thetas: np.ndarray) -> np.ndarray:
        return np.log(np.clip(self.prob_valid(thetas), 1e-12, None))

    def to_dict(self) -> dict:
        return {
            "format": "fslm-calibration",
            "version": 1,
            "weights": None if self.weights is None else [float(w) for w in self.weights],
            "bias": float(self.bias),
            "theta_mean": [float(v) for v in self.theta_mean],
            "theta_scale": [float(v) for v in self.theta_scale],
            "constant": None if self.constant is None else float(self.constant),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationModel":
        if doc.get("format") != "fslm-calibration" or doc.get("version") != 1:
            raise ValidityError(f"not a calibration document: {doc.get('format')!r}")
        weights = doc["weights"]
        return cls(
            weights=None if weights is None else np.asarray(weights, dtype=np.float64),
            bias=float(doc["bias"]),
            theta_mean=np.asarray(doc["theta_mean"], dtype=np.float64),
            theta_scale=np.asarray(doc["theta_scale"], dtype=np.float64),
            constant=None if doc["constant"] is None else float(doc["constant"]),
        )


def fit_calibration(
    thetas: np.ndarray, valid: np.ndarray, ridge: float = 1e-6
) -> CalibrationModel:
    """Fit log-linear calibration weights by penalized maximum likelihood."""
    thetas = np.asarray(thetas, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if thetas.ndim != 2 or thetas.shape[0] != valid.shape[0]:
        raise ValueError("thetas must be (n, q) with one validity flag per row")
    mean, scale = _standardize_stats(thetas)
    if valid.all() or not valid.any():
        rate = float(np.clip(np.mean(valid), 1e-12, 1.0))
        warnings.warn(
            "calibration data contains a single class; using a constant "
            f"validity probability of {rate:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        return CalibrationModel(
            weights=None, bias=0.0, theta_mean=mean, theta_scale=scale, constant=rate
        )

    z = (thetas - mean) / scale
    y = valid.astype(np.float64)
    q = thetas.shape[1]

    def objective(wb: np.ndarray) -> tuple[float, np.ndarray]:
        w, b = wb[:q], wb[q]
        t = z @ w + b
        loss = float(np.mean(np.logaddexp(0.0, t) - y * t)) + 0.5 * ridge * float(
            w @ w
        )
        resid = (expit(t) - y) / y.size
        grad = np.concatenate([z.T @ resid + ridge * w, [np.sum(resid)]])
        return loss, grad

    result = minimize(objective, np.zeros(q + 1), jac=True, method="L-BFGS-B")
    if not result.success and result.status != 1:  # status 1 = maxiter, acceptable
        raise ValidityError(f"calibration fit failed: {result.message}")
    return CalibrationModel(
        weights=result.x[:q],
        bias=float(result.x[q]),
        theta_mean=mean,
        theta_scale=scale,
    )
