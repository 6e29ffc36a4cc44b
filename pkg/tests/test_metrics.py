import numpy as np
import pytest

from fslm._util import rng_for
from fslm.metrics import KdTree, iqr, iqr_ratio, kl_estimate


def brute_nearest(points, queries, exclude=None):
    """Reference linear scan with the same lowest-index tie-break."""
    idx = np.empty(len(queries), dtype=np.int64)
    dist = np.empty(len(queries))
    for i, q in enumerate(queries):
        d2 = np.sum((points - q) ** 2, axis=1)
        if exclude is not None:
            d2[exclude[i]] = np.inf
        best = np.flatnonzero(d2 == d2.min())[0]
        idx[i] = best
        dist[i] = np.sqrt(d2[best])
    return idx, dist


def test_kdtree_matches_linear_scan():
    rng = rng_for("metrics", "scan")
    pts = rng.standard_normal((500, 4))
    queries = rng.standard_normal((200, 4))
    tree = KdTree(pts)
    got_idx, got_d = tree.query(queries)
    want_idx, want_d = brute_nearest(pts, queries)
    np.testing.assert_array_equal(got_idx, want_idx)
    np.testing.assert_allclose(got_d, want_d, rtol=1e-12)


def test_kdtree_tie_break_lowest_index():
    # many duplicated coordinates force exact ties
    rng = rng_for("metrics", "ties")
    pts = rng.integers(0, 4, size=(300, 2)).astype(float)
    queries = rng.integers(0, 4, size=(120, 2)).astype(float)
    tree = KdTree(pts)
    got_idx, _ = tree.query(queries)
    want_idx, _ = brute_nearest(pts, queries)
    np.testing.assert_array_equal(got_idx, want_idx)


def test_kdtree_three_point_example():
    tree = KdTree(np.array([[0.0], [1.0], [10.0]]))
    idx, dist = tree.query(np.array([[0.4]]))
    assert idx[0] == 0
    assert dist[0] == pytest.approx(0.4)


def test_kdtree_excluding_self_finds_twin():
    pts = np.array([[1.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    idx, dist = KdTree(pts).nearest_excluding_self()
    assert idx[0] == 1 and idx[1] == 0  # duplicates pair up
    assert dist[0] == 0.0 and dist[1] == 0.0


def test_kdtree_exclude_matches_linear_scan():
    rng = rng_for("metrics", "excl")
    pts = rng.standard_normal((200, 3))
    tree = KdTree(pts)
    got_idx, got_d = tree.nearest_excluding_self()
    want_idx, want_d = brute_nearest(pts, pts, exclude=np.arange(len(pts)))
    np.testing.assert_array_equal(got_idx, want_idx)
    np.testing.assert_allclose(got_d, want_d, rtol=1e-12)


def test_kl_micro_case_exact():
    # X = {0, 1}, Y = {0.5}: every ratio is 1 and the additive constant is
    # log(M / (N-1)) = log(1/1) = 0 ... d/N * sum(log(0.5/1.0)) = -log 2
    x = np.array([[0.0], [1.0]])
    y = np.array([[0.5]])
    value = float(kl_estimate(x, y))
    assert value == -np.log(2.0)


def test_kl_zero_for_identical_distributions():
    rng = rng_for("metrics", "zero")
    x = rng.standard_normal((4000, 2))
    y = rng.standard_normal((4000, 2))
    assert abs(float(kl_estimate(x, y))) < 0.1


def test_kl_positive_for_shifted_gaussians():
    rng = rng_for("metrics", "shift")
    x = rng.standard_normal((4000, 2)) + np.array([2.0, 0.0])
    y = rng.standard_normal((4000, 2))
    # analytic KL = |shift|^2 / 2 = 2.0
    assert float(kl_estimate(x, y)) == pytest.approx(2.0, abs=0.25)


def test_kl_permutation_invariant():
    rng = rng_for("metrics", "perm")
    x = rng.standard_normal((600, 3))
    y = rng.standard_normal((500, 3)) + 0.3
    base = float(kl_estimate(x, y))
    px = rng.permutation(len(x))
    py = rng.permutation(len(y))
    assert float(kl_estimate(x[px], y[py])) == base


def test_kl_rigid_motion_and_uniform_scaling_invariance():
    # distance ratios are unchanged by rotation + translation + uniform scale,
    # so the estimate must match to floating-point noise, seed by seed
    rot = np.linalg.qr(rng_for("metrics", "rot").standard_normal((3, 3)))[0]
    shift = np.array([5.0, -2.0, 0.5])
    for seed in range(10):
        rng = rng_for("metrics", "affine", seed)
        x = rng.standard_normal((800, 3)) * 1.4
        y = rng.standard_normal((700, 3))
        base = float(kl_estimate(x, y))
        moved = float(kl_estimate(3.0 * x @ rot.T + shift, 3.0 * y @ rot.T + shift))
        assert moved == pytest.approx(base, abs=1e-9)


def test_kl_duplicate_handling_reported():
    x = np.array([[0.0], [0.0], [1.0], [2.0]])
    y = np.array([[0.5], [1.5]])
    est = kl_estimate(x, y)
    assert np.isfinite(float(est))
    assert est.n_duplicates_x >= 1


def test_kl_asymmetric_in_arguments():
    rng = rng_for("metrics", "asym")
    x = rng.standard_normal((2000, 1)) * 3.0
    y = rng.standard_normal((2000, 1))
    # wide-vs-narrow and narrow-vs-wide disagree by construction
    assert float(kl_estimate(x, y)) != float(kl_estimate(y, x))


def test_iqr_of_known_quartiles():
    values = np.arange(1.0, 6.0)  # quartiles at 2 and 4
    assert iqr(values) == pytest.approx(2.0)


def test_iqr_scaling_equivariance():
    rng = rng_for("metrics", "iqr")
    values = rng.standard_normal((1000, 3))
    np.testing.assert_allclose(iqr(values * -2.5, axis=0), 2.5 * iqr(values, axis=0))


def test_iqr_ratio_per_parameter():
    rng = rng_for("metrics", "ratio")
    full = rng.standard_normal((5000, 2))
    reduced = full * np.array([2.0, 1.0])
    ratios = iqr_ratio(reduced, full)
    assert ratios[0] == pytest.approx(2.0, rel=1e-12)
    assert ratios[1] == pytest.approx(1.0, rel=1e-12)
