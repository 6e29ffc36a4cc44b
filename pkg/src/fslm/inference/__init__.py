"""Posterior construction, sampling, validity handling, and data generation."""

from fslm.inference.data import (
    Dataset,
    generate_hh_dataset,
    generate_lgm_dataset,
    generate_training_set,
    load_dataset,
    save_dataset,
)
from fslm.inference.posterior import UnnormalizedPosterior, posterior_for
from fslm.inference.samplers import (
    SamplerConfig,
    SampleSet,
    SamplingError,
    mcmc_sample,
    rejection_sample,
    sample_posterior,
    split_rhat,
)
from fslm.inference.validity import (
    CalibrationModel,
    RestrictedPrior,
    ValidityClassifier,
    ValidityError,
    fit_calibration,
    train_validity_classifier,
)

__all__ = [
    "CalibrationModel",
    "Dataset",
    "RestrictedPrior",
    "SampleSet",
    "SamplerConfig",
    "SamplingError",
    "UnnormalizedPosterior",
    "ValidityClassifier",
    "ValidityError",
    "fit_calibration",
    "generate_hh_dataset",
    "generate_lgm_dataset",
    "generate_training_set",
    "load_dataset",
    "mcmc_sample",
    "posterior_for",
    "rejection_sample",
    "sample_posterior",
    "save_dataset",
    "split_rhat",
    "train_validity_classifier",
]
