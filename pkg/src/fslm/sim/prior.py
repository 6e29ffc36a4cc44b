"""Axis-aligned uniform (box) priors over simulator parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fslm._util import rng_for


@dataclass(frozen=True)
class BoxPrior:
    """Independent uniform prior on a box, with named dimensions."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        names = tuple(self.names) if self.names else tuple(
            f"theta_{i}" for i in range(lower.size)
        )
        if len(names) != lower.size:
            raise ValueError(f"{len(names)} names for {lower.size} dimensions")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.widths)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` i.i.d. points uniformly in the box; shape (n, dim)."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def contains(self, theta: np.ndarray) -> np.ndarray:
        """Boolean mask of rows inside the (closed) box."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=1)

    def log_prob(self, theta: np.ndarray) -> np.ndarray:
        """Normalized log-density: -log(volume) inside, -inf outside."""
        inside = self.contains(theta)
        out = np.full(inside.shape, -np.inf, dtype=np.float64)
        out[inside] = -self.log_volume
        return out

    def iqr(self) -> np.ndarray:
        """Per-dimension interquartile range (half the box width for uniforms)."""
        return 0.5 * self.widths


def sample_prior(prior: BoxPrior, n: int, seed: int) -> np.ndarray:
    """Seed-stable prior draws: the same seed always gives the same matrix."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return prior.sample(n, rng_for(seed, "prior"))
