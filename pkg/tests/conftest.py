"""Shared fixtures: a small trained surrogate so structural tests stay fast."""

from __future__ import annotations

import numpy as np
import pytest

from fslm.inference import generate_lgm_dataset
from fslm.mdn import TrainConfig, train
from fslm.sim.lgm import LgmConfig, simulate_lgm
from fslm._util import rng_for


@pytest.fixture(scope="session")
def lgm_config() -> LgmConfig:
    return LgmConfig()


@pytest.fixture(scope="session")
def tiny_lgm_model(lgm_config):
    """A deliberately small surrogate: enough fidelity for structural tests.

    Full-accuracy models (10,000 rows, full epochs) are built inside the
    end-to-end tests that need them; everything else shares this one.
    """
    ds = generate_lgm_dataset(lgm_config, 2000, seed=("fixture", "data"))
    result = train(
        ds.thetas,
        ds.features,
        TrainConfig(seed=7, max_epochs=60, patience=10),
        theta_names=ds.theta_names,
        feature_names=ds.feature_names,
    )
    return result.model


@pytest.fixture(scope="session")
def lgm_observation(lgm_config) -> np.ndarray:
    rng = rng_for("fixture", "obs")
    theta_o = lgm_config.prior.sample(1, rng)[0]
    return simulate_lgm(lgm_config, theta_o, rng)
