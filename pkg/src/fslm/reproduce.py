"""Bundled experiment pipelines behind ``fslm reproduce``.

Each experiment runs the full desk-scale pipeline for one published-style
figure or table and writes plot-ready CSV artifacts plus ``summary.json``
with pass/fail checks.  Returned failures make the CLI exit nonzero.

Scale notes: the ``small`` budget targets a laptop-class run.  The ``paper``
budget raises the neuron-model simulation count to 50,000 — still far below
the 1,000,000 simulations behind the original figures, which is why the two
neuron experiments assert machinery properties (validity uplift, artifact
completeness) rather than exact rankings; their summaries carry an explicit
stochastic-variability note.
"""

from __future__ import annotations

import csv
import os
from typing import Any

import numpy as np

from fslm._util import write_json
from fslm.config import PhaseTimer

_BUDGETS: dict[str, dict[str, int]] = {
    "small": {
        "lgm_n_train": 10_000,
        "lgm_n_draws": 2000,
        "hh_n_pilot": 2000,
        "hh_n_main": 8000,
        "hh_n_draws": 1000,
        "greedy_k": 3,
        "greedy_runs": 1,
    },
    "paper": {
        "lgm_n_train": 10_000,
        "lgm_n_draws": 2000,
        "hh_n_pilot": 2000,
        "hh_n_main": 48_000,
        "hh_n_draws": 1000,
        "greedy_k": 5,
        "greedy_runs": 3,
    },
}

_STOCHASTIC_NOTE = (
    "Feature rankings at this simulation budget are stochastic; the original "
    "figure used 1,000,000 simulations.  This artifact asserts pipeline "
    "properties only, not the exact ranking."
)


def run_experiment(
    name: str,
    out: str,
    seed: int,
    budget: str,
    threads: int,
    timer: PhaseTimer,
) -> list[str]:
    """Run one experiment; returns acceptance-check failures (empty = pass)."""
    sizes = _BUDGETS[budget]
    runner = {
        "lgm-fig2": _lgm_fig2,
        "lgm-table1": _lgm_table1,
        "hh-fig3": _hh_fig3,
        "hh-fig4": _hh_fig4,
    }[name]
    return runner(out, seed, sizes, threads, timer)


def _check(summary: dict, failures: list[str], name: str, passed: bool, detail: str) -> None:
    summary["checks"].append({"name": name, "passed": bool(passed), "detail": detail})
    if not passed:
        failures.append(f"{name}: {detail}")


def _write_iqr_matrix(path: str, table) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# fslm-iqr-matrix v1\n")
        writer = csv.writer(fh)
        writer.writerow(["removed", "parameter", "iqr_ratio"])
        for row in table.rows:
            for pname, value in zip(table.theta_names, row.iqr_ratios):
                writer.writerow([row.removed, pname, repr(float(value))])


def _lgm_model(seed: int, n_train: int, timer: PhaseTimer):
    from fslm.inference import generate_lgm_dataset
    from fslm.mdn import TrainConfig, train
    from fslm.sim.lgm import LgmConfig

    cfg = LgmConfig()
    with timer.time("simulate"):
        ds = generate_lgm_dataset(cfg, n_train, seed=(seed, "train-data"))
    with timer.time("train"):
        result = train(
            ds.thetas,
            ds.features,
            TrainConfig(seed=seed),
            theta_names=ds.theta_names,
            feature_names=ds.feature_names,
        )
    return cfg, ds, result.model


def _lgm_observation(cfg, seed: int) -> np.ndarray:
    """Simulate the observed feature vector from a fixed mid-box parameter."""
    from fslm.sim.lgm import simulate_lgm
    from fslm._util import rng_for

    rng = rng_for(seed, "observation")
    theta_o = cfg.prior.sample(1, rng)[0]
    return simulate_lgm(cfg, theta_o, rng)


def _lgm_fig2(out: str, seed: int, sizes: dict, threads: int, timer: PhaseTimer) -> list[str]:
    from fslm.cli import write_samples_csv
    from fslm.inference import SamplerConfig
    from fslm.metrics import kl_estimate
    from fslm.select import leave_one_out_rank
    from fslm.sim.lgm import lgm_posterior_sample

    cfg, _ds, model = _lgm_model(seed, sizes["lgm_n_train"], timer)
    x_obs = _lgm_observation(cfg, seed)
    sampler = SamplerConfig(method="mcmc", n_draws=sizes["lgm_n_draws"])
    with timer.time("rank"):
        table = leave_one_out_rank(model, x_obs, cfg.prior, sampler, seed=seed)
    with timer.time("reference"):
        analytic = lgm_posterior_sample(
            cfg, x_obs, tuple(range(len(cfg.feature_names))), sizes["lgm_n_draws"],
            seed=(seed, "analytic"),
        )
    kl_full = float(kl_estimate(table.full_samples.thetas, analytic))

    table.to_csv(os.path.join(out, "rank.csv"))
    _write_iqr_matrix(os.path.join(out, "iqr_matrix.csv"), table)
    write_samples_csv(
        os.path.join(out, "posterior_samples.csv"),
        table.full_samples.thetas,
        table.theta_names,
    )
    write_samples_csv(
        os.path.join(out, "analytic_samples.csv"), analytic, table.theta_names
    )

    summary: dict[str, Any] = {"experiment": "lgm-fig2", "checks": [], "kl_full_vs_analytic": kl_full}
    failures: list[str] = []
    _check(
        summary, failures, "full-posterior-accuracy", kl_full <= 0.3,
        f"KL(surrogate full posterior vs analytic) = {kl_full:.3f} (threshold 0.3)",
    )
    last = table.row("x_3")
    ratios_ok = bool(np.all((last.iqr_ratios >= 0.8) & (last.iqr_ratios <= 1.25)))
    _check(
        summary, failures, "uninformative-feature-row", ratios_ok and last.kl <= 0.15,
        f"x_3 row IQR ratios {np.round(last.iqr_ratios, 3).tolist()}, KL {last.kl:.3f}",
    )
    write_json(os.path.join(out, "summary.json"), summary)
    return failures


def _lgm_table1(out: str, seed: int, sizes: dict, threads: int, timer: PhaseTimer) -> list[str]:
    from fslm.inference import SamplerConfig, generate_lgm_dataset
    from fslm.mdn import TrainConfig
    from fslm.metrics import kl_estimate
    from fslm.select import brute_force_rank, leave_one_out_rank

    cfg, ds, model = _lgm_model(seed, sizes["lgm_n_train"], timer)
    x_obs = _lgm_observation(cfg, seed)
    sampler = SamplerConfig(method="mcmc", n_draws=sizes["lgm_n_draws"])
    with timer.time("rank-fslm"):
        fslm_table = leave_one_out_rank(model, x_obs, cfg.prior, sampler, seed=seed)
    with timer.time("rank-brute"):
        brute_table = brute_force_rank(
            ds.thetas,
            ds.features,
            ds.theta_names,
            ds.feature_names,
            x_obs,
            cfg.prior,
            TrainConfig(seed=seed),
            sampler,
            seed=seed,
        )
    fslm_total = float(fslm_table.meta["sample_seconds_total"])
    brute_total = float(
        brute_table.meta["train_seconds_total"] + brute_table.meta["sample_seconds_total"]
    )
    cross = {
        rf.removed: float(kl_estimate(rf.samples.thetas, rb.samples.thetas))
        for rf, rb in zip(fslm_table.rows, brute_table.rows)
    }

    fslm_table.to_csv(os.path.join(out, "rank_fslm.csv"))
    brute_table.to_csv(os.path.join(out, "rank_brute.csv"))
    # timing.csv holds measured wall-clock values and is therefore the one
    # artifact that legitimately differs between reruns.
    with open(os.path.join(out, "timing.csv"), "w", newline="") as fh:
        fh.write("# fslm-timing v1\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "train_seconds", "sample_seconds", "total_seconds"])
        writer.writerow(["fslm", 0.0, fslm_total, fslm_total])
        writer.writerow(
            [
                "brute",
                brute_table.meta["train_seconds_total"],
                brute_table.meta["sample_seconds_total"],
                brute_total,
            ]
        )
    with open(os.path.join(out, "crosskl.csv"), "w", newline="") as fh:
        fh.write("# fslm-crosskl v1\n")
        writer = csv.writer(fh)
        writer.writerow(["removed", "kl_fslm_vs_brute"])
        for name, value in cross.items():
            writer.writerow([name, repr(value)])

    summary: dict[str, Any] = {
        "experiment": "lgm-table1",
        "checks": [],
        "cross_kl": cross,
    }
    failures: list[str] = []
    _check(
        summary, failures, "fslm-faster-than-brute", fslm_total < brute_total,
        f"fslm {fslm_total:.1f}s vs brute {brute_total:.1f}s",
    )
    worst = max(cross.values())
    _check(
        summary, failures, "subset-agreement", worst <= 0.2,
        f"max KL(FSLM subset vs retrained subset) = {worst:.3f} (threshold 0.2)",
    )
    write_json(os.path.join(out, "summary.json"), summary)
    return failures


def _hh_model(out: str, seed: int, sizes: dict, threads: int, timer: PhaseTimer):
    """Shared neuron pipeline: pilot, classifier, restricted data, MDN, calibration."""
    from fslm.inference import (
        RestrictedPrior,
        fit_calibration,
        generate_hh_dataset,
        train_validity_classifier,
    )
    from fslm.mdn import TrainConfig, train
    from fslm.sim.hh import StimulusProtocol, default_hh_prior, exemplar_params, simulate_hh
    from fslm.features import extract_features

    prior = default_hh_prior()
    with timer.time("simulate-pilot"):
        pilot = generate_hh_dataset(
            prior, sizes["hh_n_pilot"], seed=(seed, "pilot"), n_workers=threads
        )
    with timer.time("classifier"):
        classifier = train_validity_classifier(pilot.thetas, pilot.valid, seed=seed)
        restricted = RestrictedPrior(prior, classifier)
    with timer.time("simulate-main"):
        main = generate_hh_dataset(
            restricted, sizes["hh_n_main"], seed=(seed, "main"), n_workers=threads
        )
    with timer.time("train"):
        usable = main.valid_rows()
        result = train(
            usable.thetas,
            usable.features,
            TrainConfig(seed=seed),
            theta_names=main.theta_names,
            feature_names=main.feature_names,
        )
    with timer.time("calibration"):
        calibration = fit_calibration(main.thetas, main.valid)
    trace = simulate_hh(exemplar_params(), StimulusProtocol())
    fv = extract_features(trace)
    x_obs = fv.values
    write_json(
        os.path.join(out, "observation.json"),
        {name: float(v) for name, v in zip(main.feature_names, x_obs)},
    )
    stats = {
        "raw_valid_fraction": float(pilot.valid_fraction),
        "restricted_valid_fraction": float(main.valid_fraction),
        "n_training_rows": int(usable.n),
    }
    return prior, result.model, calibration, x_obs, stats


def _hh_sampler(sizes: dict):
    from fslm.inference import SamplerConfig

    # Long anneal and heavy thinning: the ten-dimensional surrogate posterior
    # concentrates on a curved high-density ridge with negligible prior mass.
    return SamplerConfig(
        method="mcmc", n_draws=sizes["hh_n_draws"], thin=100, burn_fraction=1.0
    )


def _hh_fig3(out: str, seed: int, sizes: dict, threads: int, timer: PhaseTimer) -> list[str]:
    from fslm.select import leave_one_out_rank

    prior, model, calibration, x_obs, stats = _hh_model(out, seed, sizes, threads, timer)
    with timer.time("rank"):
        table = leave_one_out_rank(
            model, x_obs, prior, _hh_sampler(sizes), seed=seed, calibration=calibration
        )
    table.to_csv(os.path.join(out, "rank.csv"))
    _write_iqr_matrix(os.path.join(out, "iqr_matrix.csv"), table)

    summary: dict[str, Any] = {
        "experiment": "hh-fig3",
        "checks": [],
        "note": _STOCHASTIC_NOTE,
        "dataset": stats,
        "ranking": table.ranking(),
    }
    failures: list[str] = []
    _check(
        summary, failures, "restricted-prior-uplift",
        stats["restricted_valid_fraction"] > stats["raw_valid_fraction"],
        f"valid fraction raw {stats['raw_valid_fraction']:.3f} -> restricted "
        f"{stats['restricted_valid_fraction']:.3f}",
    )
    _check(
        summary, failures, "rank-table-complete",
        all(r.status == "ok" for r in table.rows),
        "every leave-one-out subset sampled successfully",
    )
    write_json(os.path.join(out, "summary.json"), summary)
    return failures


def _hh_fig4(out: str, seed: int, sizes: dict, threads: int, timer: PhaseTimer) -> list[str]:
    from fslm.cli import _write_greedy_csv
    from fslm.select import greedy_select, random_order_trace

    prior, model, calibration, x_obs, stats = _hh_model(out, seed, sizes, threads, timer)
    sampler = _hh_sampler(sizes)
    traces = []
    with timer.time("greedy"):
        for run in range(sizes["greedy_runs"]):
            traces.append(
                (
                    "greedy",
                    run,
                    greedy_select(
                        model, x_obs, prior, sizes["greedy_k"], sampler,
                        seed=seed + run, calibration=calibration,
                    ),
                )
            )
            traces.append(
                (
                    "random",
                    run,
                    random_order_trace(
                        model, x_obs, prior, sizes["greedy_k"], sampler,
                        seed=seed + run, calibration=calibration,
                    ),
                )
            )
    _write_greedy_csv(os.path.join(out, "greedy.csv"), traces)

    greedy_final = [t.kl_path[-1] for mode, _r, t in traces if mode == "greedy"]
    random_final = [t.kl_path[-1] for mode, _r, t in traces if mode == "random"]
    summary: dict[str, Any] = {
        "experiment": "hh-fig4",
        "checks": [],
        "note": _STOCHASTIC_NOTE,
        "dataset": stats,
        "median_final_kl": {
            "greedy": float(np.median(greedy_final)),
            "random": float(np.median(random_final)),
        },
    }
    failures: list[str] = []
    _check(
        summary, failures, "traces-complete",
        all(len(t.steps) == sizes["greedy_k"] for _m, _r, t in traces),
        f"all traces ran {sizes['greedy_k']} selection steps",
    )
    write_json(os.path.join(out, "summary.json"), summary)
    return failures
