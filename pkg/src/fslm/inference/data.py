"""Training-set generation for the surrogate likelihood.

Every row draws its parameters from a per-row generator keyed on
``(seed, "item", i)``, so the dataset is identical whether rows are produced
serially, in chunks, or across worker processes.  Rows whose simulation
diverges or whose features cannot all be measured are kept (with NaN feature
entries) and flagged invalid; downstream training filters on the flag.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from fslm import io as fio
from fslm._util import read_json, rng_for, write_json
from fslm.features import CORE_FEATURES, extract_features
from fslm.sim.hh import (
    HH_PARAM_NAMES,
    HhConstants,
    StimulusProtocol,
    VoltageTrace,
)
from fslm.sim.hh import simulate_hh_batch
from fslm.sim.lgm import LgmConfig, simulate_lgm


@dataclass
class Dataset:
    """Aligned parameter/feature arrays for surrogate training."""

    thetas: np.ndarray  # (n, q)
    features: np.ndarray  # (n, d); NaN where not measurable
    valid: np.ndarray  # (n,) bool
    theta_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = self.thetas.shape[0]
        if self.features.shape[0] != n or self.valid.shape[0] != n:
            raise ValueError("thetas, features and valid must have equal length")
        if self.thetas.shape[1] != len(self.theta_names):
            raise ValueError("theta_names must match the parameter dimension")
        if self.features.shape[1] != len(self.feature_names):
            raise ValueError("feature_names must match the feature dimension")

    @property
    def n(self) -> int:
        return self.thetas.shape[0]

    @property
    def valid_fraction(self) -> float:
        return float(np.mean(self.valid))

    def valid_rows(self) -> "Dataset":
        """The subset with every feature measurable (for likelihood training)."""
        mask = self.valid
        return Dataset(
            thetas=self.thetas[mask],
            features=self.features[mask],
            valid=self.valid[mask],
            theta_names=self.theta_names,
            feature_names=self.feature_names,
            meta=dict(self.meta),
        )


def generate_training_set(
    draw_theta: Callable[[np.random.Generator], np.ndarray],
    simulate_row: Callable[[np.ndarray, np.random.Generator], tuple[np.ndarray, bool]],
    n: int,
    seed: int,
    theta_names: tuple[str, ...],
    feature_names: tuple[str, ...],
) -> Dataset:
    """Generic serial generator: one parameter draw and one simulation per row.

    ``simulate_row(theta, rng) -> (feature_values, valid)``.  The per-row rng
    is keyed on the row index, which pins the output regardless of execution
    order; specialized generators below produce bit-identical datasets by
    reusing the same keying.
    """
    q, d = len(theta_names), len(feature_names)
    thetas = np.empty((n, q))
    features = np.full((n, d), np.nan)
    valid = np.zeros(n, dtype=bool)
    for i in range(n):
        rng = rng_for(seed, "item", i)
        theta = draw_theta(rng)
        thetas[i] = theta
        values, ok = simulate_row(theta, rng)
        features[i] = values
        valid[i] = ok
    return Dataset(
        thetas=thetas,
        features=features,
        valid=valid,
        theta_names=theta_names,
        feature_names=feature_names,
        meta={"seed": seed, "n": n},
    )


def generate_lgm_dataset(config: LgmConfig, n: int, seed: int) -> Dataset:
    """Linear-Gaussian dataset; every row is valid by construction."""

    def draw(rng: np.random.Generator) -> np.ndarray:
        return config.prior.sample(1, rng)[0]

    def sim(theta: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
        return simulate_lgm(config, theta, rng), True

    ds = generate_training_set(
        draw, sim, n, seed, config.prior.names, config.feature_names
    )
    ds.meta["simulator"] = "lgm"
    return ds


def _hh_rows(
    proposal,
    lo: int,
    hi: int,
    seed: int,
    feature_names: tuple[str, ...],
    protocol: StimulusProtocol,
    constants: HhConstants,
    chunk: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows [lo, hi) of the neuron dataset (module-level so it pickles)."""
    q = len(HH_PARAM_NAMES)
    thetas = np.empty((hi - lo, q))
    for i in range(lo, hi):
        rng = rng_for(seed, "item", i)
        thetas[i - lo] = proposal.sample(1, rng)[0]
    features = np.full((hi - lo, len(feature_names)), np.nan)
    valid = np.zeros(hi - lo, dtype=bool)
    times = protocol.times()
    for start in range(0, hi - lo, chunk):
        stop = min(start + chunk, hi - lo)
        voltages, gates, diverged = simulate_hh_batch(
            thetas[start:stop], protocol, constants
        )
        for j in range(voltages.shape[0]):
            if diverged[j] >= 0:
                continue
            trace = VoltageTrace(
                times=times,
                voltage=voltages[j],
                gating_final=gates[j],
                protocol=protocol,
            )
            fv = extract_features(trace, feature_set=feature_names)
            features[start + j] = np.where(fv.valid, fv.values, np.nan)
            valid[start + j] = bool(np.all(fv.valid))
    return thetas, features, valid


def generate_hh_dataset(
    proposal,
    n: int,
    seed: int,
    feature_names: tuple[str, ...] = CORE_FEATURES,
    protocol: StimulusProtocol = StimulusProtocol(),
    constants: HhConstants = HhConstants(),
    chunk: int = 256,
    n_workers: int = 1,
) -> Dataset:
    """Neuron dataset: simulate in chunks, extract the requested features.

    ``proposal`` is a box prior or a classifier-restricted prior.  With
    ``n_workers > 1`` contiguous row ranges go to worker processes; per-row
    seeding makes the result identical to the serial path.
    """
    if n_workers <= 1:
        thetas, features, valid = _hh_rows(
            proposal, 0, n, seed, feature_names, protocol, constants, chunk
        )
    else:
        bounds = np.linspace(0, n, n_workers + 1).astype(int)
        jobs = [
            (proposal, int(a), int(b), seed, feature_names, protocol, constants, chunk)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(_hh_rows_star, jobs))
        thetas = np.concatenate([p[0] for p in parts], axis=0)
        features = np.concatenate([p[1] for p in parts], axis=0)
        valid = np.concatenate([p[2] for p in parts], axis=0)
    return Dataset(
        thetas=thetas,
        features=features,
        valid=valid,
        theta_names=HH_PARAM_NAMES,
        feature_names=tuple(feature_names),
        meta={"seed": seed, "n": n, "simulator": "hh"},
    )


def _hh_rows_star(args) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _hh_rows(*args)


def save_dataset(dataset: Dataset, directory: str, force: bool = False) -> None:
    """Write a dataset as three matrix files plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    meta_path = os.path.join(directory, "dataset.json")
    if os.path.exists(meta_path) and not force:
        raise FileExistsError(f"{meta_path} exists; pass force=True to overwrite")
    fio.write_matrix(
        os.path.join(directory, "thetas.bin"), dataset.thetas, list(dataset.theta_names)
    )
    fio.write_matrix(
        os.path.join(directory, "features.bin"),
        dataset.features,
        list(dataset.feature_names),
    )
    fio.write_matrix(
        os.path.join(directory, "valid.bin"),
        dataset.valid.astype(np.float64)[:, None],
        ["valid"],
    )
    write_json(
        meta_path,
        {
            "kind": "fslm-dataset",
            "version": 1,
            "n": dataset.n,
            "theta_names": list(dataset.theta_names),
            "feature_names": list(dataset.feature_names),
            "meta": dataset.meta,
        },
    )


def load_dataset(directory: str) -> Dataset:
    meta = read_json(os.path.join(directory, "dataset.json"))
    if meta.get("kind") != "fslm-dataset":
        raise fio.FileFormatError(f"{directory} does not contain a dataset manifest")
    thetas, _, _ = fio.read_matrix(os.path.join(directory, "thetas.bin"))
    features, _, _ = fio.read_matrix(os.path.join(directory, "features.bin"))
    valid_col, _, _ = fio.read_matrix(os.path.join(directory, "valid.bin"))
    valid = valid_col[:, 0] > 0.5
    return Dataset(
        thetas=thetas,
        features=features,
        valid=valid,
        theta_names=tuple(meta["theta_names"]),
        feature_names=tuple(meta["feature_names"]),
        meta=dict(meta.get("meta", {})),
    )
