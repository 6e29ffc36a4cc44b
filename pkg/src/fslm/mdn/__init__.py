"""Mixture-density surrogate likelihood: mixture type, network, training."""

from fslm.mdn.mixture import GaussianMixture, marginal_logpdf_batch
from fslm.mdn.model import MdnModel, head_dim
from fslm.mdn.train import (
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    mdn_nll,
    mdn_nll_grads,
    train,
)

__all__ = [
    "GaussianMixture",
    "marginal_logpdf_batch",
    "MdnModel",
    "head_dim",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "mdn_nll",
    "mdn_nll_grads",
    "train",
]
