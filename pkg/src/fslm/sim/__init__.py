"""Reference simulators and priors."""

from fslm.sim.hh import (
    HH_PARAM_NAMES,
    HhConstants,
    HhParams,
    SimulationDivergedError,
    StimulusProtocol,
    VoltageTrace,
    default_hh_prior,
    gating_steady_state,
    gating_time_constants,
    simulate_hh,
    simulate_hh_batch,
)
from fslm.sim.lgm import (
    LGM_FEATURE_NAMES,
    LgmConfig,
    lgm_posterior_logpdf,
    lgm_posterior_sample,
    simulate_lgm,
)
from fslm.sim.prior import BoxPrior, sample_prior

__all__ = [
    "BoxPrior",
    "sample_prior",
    "LgmConfig",
    "LGM_FEATURE_NAMES",
    "simulate_lgm",
    "lgm_posterior_logpdf",
    "lgm_posterior_sample",
    "HhConstants",
    "HhParams",
    "HH_PARAM_NAMES",
    "StimulusProtocol",
    "VoltageTrace",
    "SimulationDivergedError",
    "default_hh_prior",
    "gating_steady_state",
    "gating_time_constants",
    "simulate_hh",
    "simulate_hh_batch",
]
