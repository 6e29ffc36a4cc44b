"""Unnormalized posteriors from a trained surrogate likelihood.

The surrogate is trained once on the full feature vector; evaluating a
posterior under any feature subset marginalizes the predicted mixture
analytically (no retraining, no re-simulation).  The density composed here is

    log q(x_obs[keep] | theta)  +  log p(theta)  [+ log c(theta)]

with q the marginalized mixture, p the box prior, and c an optional
calibration factor that absorbs simulation-validity bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fslm.mdn.mixture import marginal_logpdf_batch
from fslm.mdn.model import MdnModel
from fslm.sim.prior import BoxPrior

#: Evaluation chunk so covariance blocks never exceed a few tens of MB.
_CHUNK = 4096


@dataclass(frozen=True)
class UnnormalizedPosterior:
    """log-posterior (up to a constant) under a subset of observed features."""

    model: MdnModel
    x_obs: np.ndarray  # full-length feature vector, original units
    keep: tuple[int, ...]  # sorted feature indices retained
    prior: BoxPrior
    calibration: object | None = field(default=None)

    def __post_init__(self) -> None:
        x_obs = np.asarray(self.x_obs, dtype=np.float64)
        if x_obs.shape != (self.model.x_dim,):
            raise ValueError(
                f"x_obs must have the model's feature dimension {self.model.x_dim}"
            )
        keep = tuple(sorted(int(k) for k in self.keep))
        if len(keep) == 0:
            raise ValueError("keep must retain at least one feature")
        if len(set(keep)) != len(keep):
            raise ValueError("keep contains repeated features")
        if keep[0] < 0 or keep[-1] >= self.model.x_dim:
            raise ValueError(f"keep indices must lie in [0, {self.model.x_dim})")
        if not np.all(np.isfinite(x_obs[list(keep)])):
            raise ValueError("observed values for kept features must be finite")
        if self.prior.dim != self.model.theta_dim:
            raise ValueError("prior dimension must match the model's parameters")
        object.__setattr__(self, "x_obs", x_obs)
        object.__setattr__(self, "keep", keep)

    @property
    def keep_names(self) -> tuple[str, ...]:
        return tuple(self.model.feature_names[i] for i in self.keep)

    def logpdf(self, thetas: np.ndarray) -> np.ndarray:
        """Batched log-density; -inf outside the prior box; NaN input rejected."""
        thetas = np.asarray(thetas, dtype=np.float64)
        single = thetas.ndim == 1
        pts = np.atleast_2d(thetas)
        if pts.shape[1] != self.model.theta_dim:
            raise ValueError(
                f"parameter vectors must have dimension {self.model.theta_dim}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("parameter vectors must be finite")

        out = np.full(pts.shape[0], -np.inf)
        inside = self.prior.contains(pts)
        idx = np.where(inside)[0]
        x_keep = self.x_obs[list(self.keep)]
        for lo in range(0, idx.size, _CHUNK):
            sel = idx[lo : lo + _CHUNK]
            log_w, means, covs = self.model.forward_batch(pts[sel])
            out[sel] = marginal_logpdf_batch(log_w, means, covs, self.keep, x_keep)
        out[inside] += -self.prior.log_volume
        if self.calibration is not None:
            out[inside] += self.calibration.log_prob_valid(pts[inside])
        return out[0] if single else out


def posterior_for(
    model: MdnModel,
    x_obs: np.ndarray,
    keep_names: tuple[str, ...] | None,
    prior: BoxPrior,
    calibration: object | None = None,
) -> UnnormalizedPosterior:
    """Build a posterior from feature names (None means keep everything)."""
    if keep_names is None:
        keep = tuple(range(model.x_dim))
    else:
        missing = [n for n in keep_names if n not in model.feature_names]
        if missing:
            raise ValueError(f"model does not provide features: {missing}")
        keep = tuple(model.feature_names.index(n) for n in keep_names)
    return UnnormalizedPosterior(
        model=model, x_obs=x_obs, keep=keep, prior=prior, calibration=calibration
    )
