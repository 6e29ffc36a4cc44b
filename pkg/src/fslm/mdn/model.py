"""Conditional mixture-density network q(x | theta).

A tanh MLP maps a (standardized) parameter vector to the weights, means, and
Cholesky factors of a Gaussian mixture over the (standardized) feature
vector.  The diagonal of each factor is parameterized through ``exp`` so it
stays positive; the strictly-lower triangle is unconstrained (omitted
entirely when ``diagonal=True``).

Standardization is transparent: ``forward`` returns mixtures in original
feature units by rescaling the standardized-space mixture (mean shift plus a
diagonal row scaling of the Cholesky factor), so the log-density in original
units equals the standardized-space log-density minus the log of the scale
Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fslm import io as fslm_io
from fslm._nnet import mlp_forward
from fslm.mdn.mixture import GaussianMixture

MODEL_KIND = "fslm-mdn"


def head_dim(n_components: int, x_dim: int, diagonal: bool) -> int:
    """Size of the network head: logits + means + log-diagonals [+ off-diagonals]."""
    tri = 0 if diagonal else x_dim * (x_dim - 1) // 2
    return n_components * (1 + 2 * x_dim + tri)


@dataclass
class MdnModel:
    theta_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    hidden_sizes: tuple[int, ...]
    n_components: int
    diagonal: bool
    params: list[np.ndarray]
    theta_mean: np.ndarray
    theta_scale: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    _tril: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def theta_dim(self) -> int:
        return len(self.theta_names)

    @property
    def x_dim(self) -> int:
        return len(self.feature_names)

    def _split_head(
        self, out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Split head output (B, P) into logits, means, log-diags, off-diags."""
        b = out.shape[0]
        k, d = self.n_components, self.x_dim
        logits = out[:, :k]
        means = out[:, k : k + k * d].reshape(b, k, d)
        log_diag = out[:, k + k * d : k + 2 * k * d].reshape(b, k, d)
        off = out[:, k + 2 * k * d :].reshape(b, k, -1)
        return logits, means, log_diag, off

    def _build_chol(self, log_diag: np.ndarray, off: np.ndarray) -> np.ndarray:
        b, k, d = log_diag.shape
        chol = np.zeros((b, k, d, d))
        idx = np.arange(d)
        chol[:, :, idx, idx] = np.exp(log_diag)
        if not self.diagonal and d > 1:
            if self._tril is None:
                self._tril = np.tril_indices(d, k=-1)
            rows, cols = self._tril
            chol[:, :, rows, cols] = off
        return chol

    def standardize_theta(self, thetas: np.ndarray) -> np.ndarray:
        return (thetas - self.theta_mean) / self.theta_scale

    def standardize_x(self, xs: np.ndarray) -> np.ndarray:
        return (xs - self.x_mean) / self.x_scale

    def forward_std(
        self, thetas_std: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mixture parameters in standardized feature space.

        Returns ``(log_weights (B, K), means (B, K, D), chol (B, K, D, D))``.
        """
        out, _ = mlp_forward(self.params, thetas_std)
        logits, means, log_diag, off = self._split_head(out)
        log_w = logits - _logsumexp_rows(logits)
        return log_w, means, self._build_chol(log_diag, off)

    def forward_batch(
        self, thetas: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mixture parameters in original feature units for a (B, q) batch.

        Returns ``(log_weights (B, K), means (B, K, D), covs (B, K, D, D))``.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        if thetas.shape[1] != self.theta_dim:
            raise ValueError(f"parameter vectors must have dimension {self.theta_dim}")
        if not np.all(np.isfinite(thetas)):
            raise ValueError("parameter vectors must be finite")
        log_w, mu_std, chol_std = self.forward_std(self.standardize_theta(thetas))
        means = self.x_mean + self.x_scale * mu_std
        chol = self.x_scale[:, None] * chol_std
        covs = np.einsum("bkij,bklj->bkil", chol, chol)
        return log_w, means, covs

    def forward(self, theta: np.ndarray) -> GaussianMixture:
        """Predicted mixture q(x | theta) in original units for one theta."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 1:
            raise ValueError("forward takes a single parameter vector; "
                             "use forward_batch for batches")
        log_w, means, covs = self.forward_batch(theta[None, :])
        weights = np.exp(log_w[0])
        return GaussianMixture(weights / weights.sum(), means[0], covs[0])

    def log_prob(self, thetas: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """log q(x_i | theta_i) in original units for paired rows."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if thetas.shape[0] != xs.shape[0]:
            raise ValueError("thetas and xs must pair up row by row")
        log_w, mu_std, chol_std = self.forward_std(self.standardize_theta(thetas))
        x_std = self.standardize_x(xs)
        from fslm.mdn.mixture import LOG_2PI, solve_lower_batched

        resid = x_std[:, None, :] - mu_std
        z = solve_lower_batched(chol_std, resid)
        quad = np.sum(z * z, axis=-1)
        logdet = np.sum(
            np.log(np.diagonal(chol_std, axis1=-2, axis2=-1)), axis=-1
        )
        comp = -0.5 * quad - logdet - 0.5 * self.x_dim * LOG_2PI
        s = log_w + comp
        peak = s.max(axis=1, keepdims=True)
        std_logprob = np.log(np.sum(np.exp(s - peak), axis=1)) + peak[:, 0]
        return std_logprob - np.sum(np.log(self.x_scale))

    def save(self, path) -> None:
        header = {
            "kind": MODEL_KIND,
            "theta_names": list(self.theta_names),
            "feature_names": list(self.feature_names),
            "hidden_sizes": list(self.hidden_sizes),
            "n_components": self.n_components,
            "diagonal": self.diagonal,
        }
        arrays = [self.theta_mean, self.theta_scale, self.x_mean, self.x_scale]
        arrays.extend(self.params)
        fslm_io.write_model_file(path, header, arrays)

    @classmethod
    def load(cls, path) -> "MdnModel":
        header, arrays = fslm_io.read_model_file(path)
        if header.get("kind") != MODEL_KIND:
            raise fslm_io.FileFormatError(f"{path}: not a density-network model file")
        return cls(
            theta_names=tuple(header["theta_names"]),
            feature_names=tuple(header["feature_names"]),
            hidden_sizes=tuple(header["hidden_sizes"]),
            n_components=int(header["n_components"]),
            diagonal=bool(header["diagonal"]),
            params=arrays[4:],
            theta_mean=arrays[0],
            theta_scale=arrays[1],
            x_mean=arrays[2],
            x_scale=arrays[3],
        )


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    peak = a.max(axis=1, keepdims=True)
    return np.log(np.sum(np.exp(a - peak), axis=1, keepdims=True)) + peak
