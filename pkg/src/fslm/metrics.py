"""Sample-based divergence and dispersion metrics.

The KL estimator is the classic one-nearest-neighbour construction (Wang,
Kulkarni & Verdu 2009, IEEE Trans IT 55:2392-2405): with rho_i the distance
from X_i to its nearest other point in X and nu_i the distance to its nearest
point in Y,

    KL(X || Y) ~= (d / N) * sum_i log(nu_i / rho_i) + log(M / (N - 1)).

Nearest neighbours come from an in-package kd-tree with exact, documented
tie-breaking (lowest original index), so estimates are reproducible to the
bit across runs and backends.  Exact duplicate points in X would make some
rho_i zero; those distances are floored at 1e-12 times the data scale and the
count is reported, since more than a sprinkle of duplicates (e.g. from an
unthinned Markov chain) invalidates the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fslm._core import get_backend

DUPLICATE_EPS_FACTOR = 1e-12


class KdTree:
    """Static kd-tree over a fixed point set (median split, widest dimension).

    Queries return exact nearest neighbours; among equidistant candidates the
    lowest original point index wins, independent of tree layout.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise ValueError("points must be a non-empty (n, d) array")
        if not np.all(np.isfinite(points)):
            raise ValueError("points must be finite")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.points = points
        self.leaf_size = int(leaf_size)
        n = points.shape[0]

        split_dim: list[int] = []
        split_val: list[float] = []
        left: list[int] = []
        right: list[int] = []
        start: list[int] = []
        end: list[int] = []
        perm = np.arange(n, dtype=np.int32)

        def build(lo: int, hi: int) -> int:
            node = len(split_dim)
            split_dim.append(-1)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(lo)
            end.append(hi)
            if hi - lo <= self.leaf_size:
                return node
            seg = points[perm[lo:hi]]
            spread = seg.max(axis=0) - seg.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                return node  # all points identical; keep as a leaf
            coords = seg[:, dim]
            order = np.argsort(coords, kind="stable")
            perm[lo:hi] = perm[lo:hi][order]
            mid = (hi - lo) // 2
            split_dim[node] = dim
            split_val[node] = float(coords[order[mid - 1]])
            left[node] = build(lo, lo + mid)
            right[node] = build(lo + mid, hi)
            return node

        import sys

        depth_budget = int(2 * np.ceil(np.log2(max(n, 2))) + 64)
        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, depth_budget * 4))
        try:
            build(0, n)
        finally:
            sys.setrecursionlimit(old_limit)

        self._arrays = (
            np.array(split_dim, dtype=np.int32),
            np.array(split_val, dtype=np.float64),
            np.array(left, dtype=np.int32),
            np.array(right, dtype=np.int32),
            np.array(start, dtype=np.int32),
            np.array(end, dtype=np.int32),
            perm,
            np.ascontiguousarray(points[perm]),
        )

    def query(
        self, queries: np.ndarray, exclude: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Nearest tree point per query row; returns (indices, distances).

        ``exclude[i]`` names one original point index to skip for query i.
        """
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.points.shape[1]:
            raise ValueError(
                f"queries must have shape (m, {self.points.shape[1]})"
            )
        if exclude is not None:
            exclude = np.ascontiguousarray(exclude, dtype=np.int64)
            if exclude.shape != (queries.shape[0],):
                raise ValueError("exclude must have one entry per query")
            if self.points.shape[0] == 1 and np.any(exclude == 0):
                raise ValueError("cannot exclude the only point in the tree")
        idx, d2 = get_backend().kd_query_batch(self._arrays, queries, exclude)
        return idx, np.sqrt(d2)

    def nearest_excluding_self(self) -> tuple[np.ndarray, np.ndarray]:
        """For each tree point, its nearest *other* tree point."""
        n = self.points.shape[0]
        if n < 2:
            raise ValueError("need at least two points to exclude self-matches")
        return self.query(self.points, exclude=np.arange(n, dtype=np.int64))


@dataclass(frozen=True)
class KlEstimate:
    """Nearest-neighbour KL estimate plus the diagnostics that qualify it."""

    value: float
    n_x: int
    n_y: int
    dim: int
    n_duplicates_x: int  # rho_i = 0 pairs floored to epsilon
    n_matches_xy: int  # nu_i = 0 coincidences floored to epsilon
    epsilon: float

    def __float__(self) -> float:
        return self.value


def kl_estimate(x_samples: np.ndarray, y_samples: np.ndarray) -> KlEstimate:
    """Estimate KL(P || Q) from samples X ~ P (N, d) and Y ~ Q (M, d).

    Both inputs must share the dimension d and use the same (arbitrary)
    units; the estimate is invariant under any common rigid motion plus
    uniform scaling because only distance ratios enter.
    """
    x = np.ascontiguousarray(x_samples, dtype=np.float64)
    y = np.ascontiguousarray(y_samples, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("sample sets must be 2-D arrays")
    if x.shape[1] != y.shape[1]:
        raise ValueError("sample sets must share their dimension")
    if x.shape[0] < 2:
        raise ValueError("need at least two X samples")
    if y.shape[0] < 1:
        raise ValueError("need at least one Y sample")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    n, d = x.shape
    m = y.shape[0]

    _, rho = KdTree(x).nearest_excluding_self()
    _, nu = KdTree(y).query(x)

    ptp = x.max(axis=0) - x.min(axis=0)
    scale = float(ptp.max()) if ptp.size and ptp.max() > 0 else 1.0
    eps = DUPLICATE_EPS_FACTOR * scale
    n_dup = int(np.sum(rho == 0.0))
    n_match = int(np.sum(nu == 0.0))
    rho = np.maximum(rho, eps)
    nu = np.maximum(nu, eps)

    # summing in sorted order makes the estimate exactly invariant under row
    # permutations of either sample set (same multiset of ratios, same sum)
    value = float((d / n) * np.sum(np.sort(np.log(nu / rho))) + np.log(m / (n - 1.0)))
    return KlEstimate(
        value=value,
        n_x=n,
        n_y=m,
        dim=d,
        n_duplicates_x=n_dup,
        n_matches_xy=n_match,
        epsilon=eps,
    )


def iqr(values: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Interquartile range (Q3 - Q1) with linear quantile interpolation."""
    q1, q3 = np.percentile(values, [25.0, 75.0], axis=axis)
    return q3 - q1


def iqr_ratio(reduced_samples: np.ndarray, full_samples: np.ndarray) -> np.ndarray:
    """Per-dimension IQR of reduced-posterior samples over the full posterior's.

    Values near 1 mean the removed information did not matter for that
    parameter; values well above 1 mean uncertainty grew.
    """
    reduced = np.asarray(reduced_samples, dtype=np.float64)
    full = np.asarray(full_samples, dtype=np.float64)
    if reduced.ndim != 2 or full.ndim != 2 or reduced.shape[1] != full.shape[1]:
        raise ValueError("sample sets must be 2-D with matching dimension")
    return np.asarray(iqr(reduced, axis=0) / iqr(full, axis=0))
