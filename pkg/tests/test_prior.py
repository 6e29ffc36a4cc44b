import numpy as np
import pytest

from fslm._util import rng_for
from fslm.sim.prior import BoxPrior, sample_prior


@pytest.fixture
def box() -> BoxPrior:
    return BoxPrior(lower=[-1.0, 0.0, 2.0], upper=[1.0, 4.0, 2.5])


def test_samples_stay_in_box(box):
    draws = box.sample(5000, rng_for("prior", 0))
    assert draws.shape == (5000, 3)
    assert np.all(draws >= box.lower) and np.all(draws <= box.upper)
    # each marginal actually spans its interval
    assert np.all(draws.max(axis=0) - draws.min(axis=0) > 0.9 * box.widths)


def test_log_prob_is_negative_log_volume_inside(box):
    volume = np.prod(box.widths)
    inside = np.array([[0.0, 1.0, 2.2], [-0.5, 3.9, 2.01]])
    np.testing.assert_allclose(box.log_prob(inside), -np.log(volume))
    assert box.log_volume == pytest.approx(np.log(volume))


def test_log_prob_outside_is_minus_inf(box):
    outside = np.array([[2.0, 1.0, 2.2], [0.0, 1.0, 3.0]])
    assert np.all(np.isneginf(box.log_prob(outside)))
    assert not box.contains(outside).any()


def test_boundary_points_count_as_inside(box):
    edge = np.array([box.lower, box.upper])
    assert box.contains(edge).all()


def test_iqr_is_half_width(box):
    # uniform IQR = (upper - lower) / 2, exactly
    np.testing.assert_allclose(box.iqr(), box.widths / 2.0)


def test_degenerate_bounds_rejected():
    with pytest.raises(ValueError):
        BoxPrior(lower=[0.0, 1.0], upper=[1.0, 1.0])


def test_sample_prior_seeded_wrapper_deterministic(box):
    a = sample_prior(box, 10, seed=3)
    b = sample_prior(box, 10, seed=3)
    c = sample_prior(box, 10, seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
