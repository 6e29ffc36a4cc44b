"""Full-covariance Gaussian mixtures with exact marginalization.

Marginalizing a Gaussian mixture over a subset of its output dimensions is
closed-form: weights are unchanged and each component keeps the mean entries
and covariance sub-block of the retained dimensions.  The mixture therefore
stores component covariances as its ground truth and derives Cholesky
factors on demand; slicing a stored covariance is exact (no refactoring
round-off), so nested marginalizations compose to exactly the same mixture
as marginalizing once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))

#: Mixture weights are clamped at this floor inside log-sum-exp so that a
#: zero-weight component contributes a finite (vanishing) term instead of NaN.
WEIGHT_FLOOR = 1e-12


def _check_keep(keep: tuple[int, ...], dim: int) -> list[int]:
    keep = tuple(int(k) for k in keep)
    if len(keep) == 0:
        raise ValueError("keep must retain at least one dimension")
    if len(set(keep)) != len(keep):
        raise ValueError("keep contains repeated dimensions")
    if any(k < 0 or k >= dim for k in keep):
        raise ValueError(f"keep indices must lie in [0, {dim})")
    return sorted(keep)


@dataclass
class GaussianMixture:
    """K-component Gaussian mixture over D dimensions."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covs: np.ndarray  # (K, D, D), symmetric positive definite
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covs, dtype=np.float64)
        if weights.ndim != 1:
            raise ValueError("weights must be a vector")
        k = weights.size
        if means.shape != (k, means.shape[1]) or means.ndim != 2:
            raise ValueError("means must have shape (K, D)")
        d = means.shape[1]
        if covs.shape != (k, d, d):
            raise ValueError("covs must have shape (K, D, D)")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        total = weights.sum()
        if not np.isclose(total, 1.0, atol=1e-8):
            raise ValueError(f"weights must sum to 1 (got {total})")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2), atol=1e-10):
            raise ValueError("covariances must be symmetric")
        self.weights = weights
        self.means = means
        self.covs = covs

    @classmethod
    def from_cholesky(
        cls, weights: np.ndarray, means: np.ndarray, chol_factors: np.ndarray
    ) -> "GaussianMixture":
        """Build from lower-triangular factors L_k with Sigma_k = L_k L_k^T."""
        chol = np.asarray(chol_factors, dtype=np.float64)
        covs = chol @ np.swapaxes(chol, 1, 2)
        mix = cls(weights, means, covs)
        mix._chol = chol
        return mix

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def chol_factors(self) -> np.ndarray:
        """Lower-triangular Cholesky factors of the component covariances."""
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.covs)
        return self._chol

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        """Mixture log-density at one point (D,) or a batch (N, D)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"points must have dimension {self.dim}")
        chol = self.chol_factors
        log_w = np.log(np.maximum(self.weights, WEIGHT_FLOOR))
        comp = np.empty((pts.shape[0], self.n_components))
        for k in range(self.n_components):
            resid = (pts - self.means[k]).T  # (D, N)
            z = solve_triangular(chol[k], resid, lower=True)
            logdet = np.sum(np.log(np.diag(chol[k])))
            comp[:, k] = -0.5 * np.sum(z * z, axis=0) - logdet - 0.5 * self.dim * LOG_2PI
        s = log_w + comp
        peak = s.max(axis=1, keepdims=True)
        out = np.log(np.sum(np.exp(s - peak), axis=1)) + peak[:, 0]
        return out[0] if single else out

    def marginalize(self, keep: tuple[int, ...]) -> "GaussianMixture":
        """Marginal mixture over the dimensions in ``keep`` (sorted order)."""
        sub = _check_keep(keep, self.dim)
        means = self.means[:, sub]
        covs = self.covs[:, sub][:, :, sub]
        return GaussianMixture(self.weights.copy(), means.copy(), covs.copy())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` points; component choice and noise come from ``rng``."""
        counts = rng.multinomial(n, self.weights / self.weights.sum())
        chol = self.chol_factors
        parts = []
        for k, c in enumerate(counts):
            if c == 0:
                continue
            noise = rng.standard_normal((c, self.dim))
            parts.append(self.means[k] + noise @ chol[k].T)
        out = np.concatenate(parts, axis=0) if parts else np.empty((0, self.dim))
        return out[rng.permutation(n)]

    def mean(self) -> np.ndarray:
        """Overall mixture mean."""
        return self.weights @ self.means


def solve_lower_batched(chol: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Solve L z = r for batches of lower-triangular L.

    ``chol`` has shape (..., D, D) and ``resid`` (..., D); the loop runs over
    the (small) dimension D while everything else stays vectorized.
    """
    d = resid.shape[-1]
    z = np.empty_like(resid)
    for j in range(d):
        acc = resid[..., j]
        if j > 0:
            acc = acc - np.einsum("...i,...i->...", chol[..., j, :j], z[..., :j])
        z[..., j] = acc / chol[..., j, j]
    return z


def solve_upper_from_lower_batched(chol: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Solve L^T u = z for batches of lower-triangular L."""
    d = z.shape[-1]
    u = np.empty_like(z)
    for j in range(d - 1, -1, -1):
        acc = z[..., j]
        if j < d - 1:
            acc = acc - np.einsum("...i,...i->...", chol[..., j + 1 :, j], u[..., j + 1 :])
        u[..., j] = acc / chol[..., j, j]
    return u


def marginal_logpdf_batch(
    log_weights: np.ndarray,
    means: np.ndarray,
    covs: np.ndarray,
    keep: tuple[int, ...],
    x_keep: np.ndarray,
) -> np.ndarray:
    """Marginal mixture log-density at one point, for a batch of mixtures.

    Used on the output of a conditional-density network evaluated at many
    parameter vectors at once: ``log_weights`` (N, K), ``means`` (N, K, D),
    ``covs`` (N, K, D, D).  ``x_keep`` holds the observed values of the kept
    dimensions, in the same sorted order ``keep`` is interpreted in.
    """
    sub = _check_keep(keep, means.shape[2])
    x_keep = np.asarray(x_keep, dtype=np.float64)
    if x_keep.shape != (len(sub),):
        raise ValueError(f"x_keep must have shape ({len(sub)},)")
    mu = means[:, :, sub]
    cov = covs[:, :, sub][:, :, :, sub]
    chol = np.linalg.cholesky(cov)
    z = solve_lower_batched(chol, x_keep - mu)
    quad = np.sum(z * z, axis=-1)
    logdet = np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    comp = -0.5 * quad - logdet - 0.5 * len(sub) * LOG_2PI
    s = log_weights + comp
    peak = s.max(axis=1, keepdims=True)
    return np.log(np.sum(np.exp(s - peak), axis=1)) + peak[:, 0]
