"""Posterior samplers: prior-envelope rejection and adaptive random-walk MCMC.

Both samplers consume any target exposing ``logpdf(thetas)`` (batched,
returning -inf outside the support) and ``prior`` (a box prior used for
initialization and, for rejection, as the proposal).  Determinism: every
sampler derives its generator from an explicit seed key, so results are
independent of process layout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from fslm._util import rng_for

_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_HALF = float(np.log(0.5))


class SamplingError(RuntimeError):
    """Raised when a sampler cannot produce the requested draws."""


@dataclass(frozen=True)
class SamplerConfig:
    """How to draw posterior samples.

    ``thin`` only applies to MCMC: a random-walk chain repeats its state on
    every rejection, and exact repeats have zero nearest-neighbour distance,
    which the divergence estimator can only handle by flooring — inflating
    estimates badly.  Keeping every ``thin``-th state makes repeats rare: at
    the adapted acceptance a, P(repeat) = (1-a)^thin, so the default 30 gives
    under one expected duplicate per thousand draws at a = 0.234.
    """

    method: str = "mcmc"
    n_draws: int = 500
    chains: int = 20
    thin: int = 30
    burn_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.method not in ("rejection", "mcmc"):
            raise ValueError(f"unknown sampling method: {self.method!r}")
        if self.n_draws < 1:
            raise ValueError("n_draws must be positive")
        if self.chains < 2:
            raise ValueError("mcmc requires at least 2 chains for diagnostics")
        if self.thin < 1:
            raise ValueError("thin must be a positive integer")
        if not 0.0 < self.burn_fraction <= 2.0:
            raise ValueError("burn_fraction must be in (0, 2]")


@dataclass
class SampleSet:
    """Posterior draws plus sampler diagnostics."""

    thetas: np.ndarray  # (n, q)
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.thetas.shape[0]


def rejection_sample(
    target,
    n_draws: int,
    seed_key: Sequence,
    envelope_draws: int = 10_000,
    envelope_safety: float = 10.0,
    batch_size: int = 20_000,
    min_acceptance: float = 1e-6,
    max_proposals: int = 20_000_000,
) -> SampleSet:
    """Rejection sampling with an empirical prior-draw envelope.

    The envelope bound is the maximum target log-density over a pilot set of
    prior draws, inflated by ``envelope_safety``.  Proposals that exceed the
    bound are accepted and counted as violations in the diagnostics.
    """
    rng = rng_for(*seed_key)
    prior = target.prior

    pilot = prior.sample(envelope_draws, rng)
    pilot_lp = target.logpdf(pilot)
    finite = np.isfinite(pilot_lp)
    if not np.any(finite):
        raise SamplingError(
            "rejection envelope failed: target log-density is -inf at every "
            f"pilot prior draw ({envelope_draws} tried)"
        )
    log_envelope = float(np.max(pilot_lp[finite])) + np.log(envelope_safety)

    accepted: list[np.ndarray] = []
    n_accepted = 0
    n_proposed = 0
    n_violations = 0
    while n_accepted < n_draws:
        thetas = prior.sample(batch_size, rng)
        lp = target.logpdf(thetas)
        n_proposed += batch_size
        log_u = np.log(rng.uniform(size=batch_size))
        take = log_u < lp - log_envelope
        n_violations += int(np.sum(lp > log_envelope))
        if np.any(take):
            accepted.append(thetas[take])
            n_accepted += int(np.sum(take))
        rate = max(n_accepted, 1) / n_proposed
        if n_proposed >= max_proposals or (
            n_proposed >= 100 * batch_size and rate < min_acceptance
        ):
            raise SamplingError(
                f"rejection acceptance rate {n_accepted / n_proposed:.2e} below "
                f"{min_acceptance:.0e} after {n_proposed} proposals; use MCMC "
                "for this target"
            )

    thetas = np.concatenate(accepted, axis=0)[:n_draws]
    return SampleSet(
        thetas=thetas,
        method="rejection",
        diagnostics={
            "acceptance": n_accepted / n_proposed,
            "n_proposed": n_proposed,
            "log_envelope": log_envelope,
            "envelope_violations": n_violations,
        },
    )


def _log_sigmoid(u: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -u)


def _to_box(u: np.ndarray, lower: np.ndarray, width: np.ndarray) -> np.ndarray:
    return lower + width * expit(u)


def _from_box(theta: np.ndarray, lower: np.ndarray, width: np.ndarray) -> np.ndarray:
    frac = np.clip((theta - lower) / width, 1e-12, 1.0 - 1e-12)
    return np.log(frac) - np.log1p(-frac)


def _log_jacobian(u: np.ndarray, width: np.ndarray) -> np.ndarray:
    # d theta / d u = width * sigmoid(u) * (1 - sigmoid(u)), per dimension.
    return np.sum(np.log(width) + _log_sigmoid(u) + _log_sigmoid(-u), axis=-1)


def split_rhat(chain_draws: np.ndarray) -> np.ndarray:
    """Split potential-scale-reduction factor per dimension.

    ``chain_draws`` has shape (chains, draws, dim).  Each chain is split in
    half, doubling the number of sequences, and the classic between/within
    variance ratio is returned for every dimension.
    """
    c, n, q = chain_draws.shape
    half = n // 2
    if half < 2:
        return np.full(q, np.nan)
    seqs = np.concatenate(
        [chain_draws[:, :half, :], chain_draws[:, half : 2 * half, :]], axis=0
    )
    m = seqs.shape[0]
    means = seqs.mean(axis=1)  # (m, q)
    variances = seqs.var(axis=1, ddof=1)  # (m, q)
    w = variances.mean(axis=0)
    b = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b / half
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    return np.where(w > 0, rhat, 1.0)


def mcmc_sample(
    target,
    n_draws: int,
    seed_key: Sequence,
    chains: int = 20,
    thin: int = 30,
    burn_fraction: float = 0.25,
    target_acceptance: float = 0.234,
    rhat_warn: float = 1.2,
    prior_move_prob: float = 0.1,
) -> SampleSet:
    """Adaptive random-walk Metropolis in logit-transformed box coordinates.

    The box prior support maps to unconstrained space through a per-dimension
    logit, with the Jacobian folded into the target so the chain samples the
    intended density.  Proposal scale and covariance adapt toward
    ``target_acceptance`` during burn-in only; the kernel is frozen afterwards
    so the kept draws come from a fixed Markov chain.

    With probability ``prior_move_prob`` a step proposes an independent fresh
    prior draw instead of a local move.  For a uniform prior the
    Metropolis-Hastings ratio of that move reduces to the plain target ratio,
    and it rescues chains stuck in low-density tails, whose long rejection
    runs would otherwise surface as exact duplicate draws.  Local moves mix
    two scales (the adapted one and a tenth of it, chosen per step
    independently of the state, so the proposal stays symmetric): the small
    scale keeps chains moving inside mixture modes much narrower than the
    global posterior spread.

    Burn-in is annealed: the target's log-density is scaled by beta ramping
    linearly from 0 (the flat prior) to 1, so chains explore the whole box
    before the landscape sharpens.  High-dimensional surrogate posteriors can
    occupy a region whose prior mass is so small that chains started from
    prior draws otherwise need very long burn-in to find it, and chains that
    plateau in low-density pockets show up as split R-hat far above 1.
    Rescaling costs nothing: the cached log-density is reweighted, not
    re-evaluated.

    After burn-in, chains whose log-density plateau sits more than
    ``cull_margin`` below the best chain are restarted at the state of a
    surviving chain and given a re-equilibration stretch before collection.
    Within one basin the across-chain log-density spread is of order
    sqrt(dim), so the default margin only removes chains that provably failed
    to reach the region the others found; genuinely multimodal targets with
    comparable-density modes are untouched.
    """
    if chains < 2:
        raise ValueError("mcmc requires at least 2 chains for diagnostics")
    prior = target.prior
    lower = prior.lower
    width = prior.upper - prior.lower
    q = prior.dim

    kept_per_chain = -(-n_draws // chains)  # ceil
    post_steps = kept_per_chain * thin
    burn_steps = max(int(np.ceil(burn_fraction * post_steps)), 50)
    cull_margin = max(8.0, float(q))

    rng = rng_for(*seed_key)
    # Start each chain at the best of a small batch of prior draws; starting
    # deep in a tail makes early burn-in needlessly sticky.
    init_pool = prior.sample(64 * chains, rng).reshape(chains, 64, q)
    init_lp = np.stack(
        [target.logpdf(init_pool[c]) for c in range(chains)]
    )  # (chains, 64)
    theta0 = init_pool[np.arange(chains), np.argmax(init_lp, axis=1)]
    u = _from_box(theta0, lower, width)
    log_jac = _log_jacobian(u, width)
    lp_theta = target.logpdf(_to_box(u, lower, width))
    if not np.all(np.isfinite(lp_theta + log_jac)):
        raise SamplingError("mcmc initialization failed: non-finite log-density")

    log_scale = np.log(2.38 / np.sqrt(q))
    chol = np.eye(q)
    jump_mean: np.ndarray | None = None
    jump_chol = np.eye(q)
    jump_half_logdet = 0.0
    history: list[np.ndarray] = []
    accept_burn = 0
    accept_post = 0
    jump_proposed = 0
    jump_accepted = 0
    de_proposed = 0
    de_accepted = 0
    de_prob = 0.3 if chains >= 4 else 0.0
    half = chains // 2
    de_groups = (np.arange(half), np.arange(half, chains))

    def log_jump_mix(u_rows: np.ndarray, jac_rows: np.ndarray) -> np.ndarray:
        """Density of the jump proposal: half prior, half fitted Gaussian."""
        lp_prior = jac_rows - prior.log_volume
        y = solve_triangular(jump_chol, (u_rows - jump_mean).T, lower=True)
        lp_gauss = -0.5 * np.sum(y * y, axis=0) - jump_half_logdet - 0.5 * q * _LOG_2PI
        return np.logaddexp(_LOG_HALF + lp_prior, _LOG_HALF + lp_gauss)

    def record_adapt(adapt_step: int) -> None:
        """Append history; periodically refit proposal covariance and jump."""
        nonlocal chol, jump_mean, jump_chol, jump_half_logdet
        history.append(u.copy())
        cov_start = max(50, burn_steps // 4)
        cov_every = max(25, burn_steps // 8)
        if adapt_step >= cov_start and (adapt_step + 1) % cov_every == 0:
            hist = np.concatenate(history[-500:], axis=0)
            cov = np.cov(hist, rowvar=False) + 1e-9 * np.eye(q)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass
            # The jump Gaussian is widened so its tails cover the bulk.
            try:
                jc = np.linalg.cholesky(1.5 * cov)
            except np.linalg.LinAlgError:
                jc = None
            if jc is not None:
                jump_mean = hist.mean(axis=0)
                jump_chol = jc
                jump_half_logdet = float(np.sum(np.log(np.diag(jc))))

    def kernel_step(beta: float, adapt_step: int) -> int:
        """One vectorized Metropolis step; adapts when ``adapt_step`` >= 0."""
        nonlocal u, lp_theta, log_jac, log_scale
        nonlocal jump_proposed, jump_accepted
        z = rng.standard_normal((chains, q))
        kind = rng.uniform(size=chains)  # <p_jump: global jump; <p_jump+0.2: small
        jump = kind < prior_move_prob
        small = (~jump) & (kind < prior_move_prob + 0.2)
        scale = np.where(small, 0.1, 1.0) * np.exp(log_scale)
        u_prop = u + scale[:, None] * (z @ chol.T)
        n_jump = int(np.sum(jump))
        if n_jump:
            if jump_mean is None:
                u_prop[jump] = _from_box(prior.sample(n_jump, rng), lower, width)
            else:
                props = _from_box(prior.sample(n_jump, rng), lower, width)
                gauss = rng.uniform(size=n_jump) < 0.5
                n_g = int(np.sum(gauss))
                if n_g:
                    props[gauss] = (
                        jump_mean + rng.standard_normal((n_g, q)) @ jump_chol.T
                    )
                u_prop[jump] = props
        log_jac_prop = _log_jacobian(u_prop, width)
        lp_theta_prop = target.logpdf(_to_box(u_prop, lower, width))
        # Local moves are symmetric in u, so only the target ratio (annealed
        # density times Jacobian) remains.  Jump moves are independence
        # proposals; their state-free density enters the ratio explicitly.
        # For pure prior jumps that density cancels the Jacobian exactly.
        log_alpha = beta * (lp_theta_prop - lp_theta) + (log_jac_prop - log_jac)
        if n_jump:
            if jump_mean is None:
                log_alpha[jump] -= log_jac_prop[jump] - log_jac[jump]
            else:
                log_alpha[jump] += log_jump_mix(
                    u[jump], log_jac[jump]
                ) - log_jump_mix(u_prop[jump], log_jac_prop[jump])
        take = np.log(rng.uniform(size=chains)) < log_alpha
        u[take] = u_prop[take]
        lp_theta[take] = lp_theta_prop[take]
        log_jac[take] = log_jac_prop[take]

        if adapt_step < 0 and n_jump:
            jump_proposed += n_jump
            jump_accepted += int(np.sum(take[jump]))

        if adapt_step >= 0:
            normal = ~(jump | small)
            if np.any(normal):
                rate = float(np.mean(take[normal]))
                gamma = min(0.1, 10.0 / (adapt_step + 1.0))
                log_scale += gamma * (rate - target_acceptance)
        return int(np.sum(take))

    def de_step(beta: float, adapt_step: int) -> int:
        """Differential-evolution step (ter Braak 2006), red/black halves.

        Each chain in the active half moves along the difference of two
        distinct chains from the reference half.  Difference vectors track
        the population geometry, so these moves traverse curved ridges that
        defeat both covariance-adapted local steps and single-Gaussian
        independence proposals.  Updating the halves in sequence keeps the
        proposal independent of the states being updated.
        """
        nonlocal u, lp_theta, log_jac, de_proposed, de_accepted
        accepted = 0
        for active, ref in ((de_groups[0], de_groups[1]), (de_groups[1], de_groups[0])):
            na = active.size
            a = rng.integers(0, ref.size, na)
            b = rng.integers(0, ref.size, na)
            clash = a == b
            while np.any(clash):
                b[clash] = rng.integers(0, ref.size, int(np.sum(clash)))
                clash = a == b
            # Mostly the optimal-scaling factor; occasionally 1.0, which
            # proposes exact translations between population clusters.
            gamma = np.where(
                rng.uniform(size=na) < 0.1, 1.0, 2.38 / np.sqrt(2.0 * q)
            )
            diff = u[ref[a]] - u[ref[b]]
            u_prop = (
                u[active]
                + gamma[:, None] * diff
                + 1e-6 * rng.standard_normal((na, q))
            )
            log_jac_prop = _log_jacobian(u_prop, width)
            lp_prop = target.logpdf(_to_box(u_prop, lower, width))
            log_alpha = beta * (lp_prop - lp_theta[active]) + (
                log_jac_prop - log_jac[active]
            )
            take = np.log(rng.uniform(size=na)) < log_alpha
            idx = active[take]
            u[idx] = u_prop[take]
            lp_theta[idx] = lp_prop[take]
            log_jac[idx] = log_jac_prop[take]
            accepted += int(np.sum(take))
        if adapt_step < 0:
            de_proposed += chains
            de_accepted += accepted
        return accepted

    def run_step(beta: float, adapt_step: int) -> int:
        if rng.uniform() < de_prob:
            acc = de_step(beta, adapt_step)
        else:
            acc = kernel_step(beta, adapt_step)
        if adapt_step >= 0:
            record_adapt(adapt_step)
        return acc

    for step in range(burn_steps):
        beta = (step + 1) / burn_steps
        accept_burn += run_step(beta, adapt_step=step)

    # Cull chains that plateaued far below the rest, then re-equilibrate with
    # adaptation still running so the proposal refits to surviving chains.
    stuck = lp_theta < np.max(lp_theta) - cull_margin
    n_culled = int(np.sum(stuck))
    if 0 < n_culled < chains:
        survivors = np.where(~stuck)[0]
        src = survivors[rng.integers(0, survivors.size, size=n_culled)]
        u[stuck] = u[src]
        lp_theta[stuck] = lp_theta[src]
        log_jac[stuck] = log_jac[src]
        for extra in range(max(burn_steps // 2, 50)):
            run_step(1.0, adapt_step=burn_steps + extra)

    kept = np.empty((chains, kept_per_chain, q))
    kept_count = 0
    for post_step in range(post_steps):
        accept_post += run_step(1.0, adapt_step=-1)
        if (post_step + 1) % thin == 0:
            kept[:, kept_count, :] = _to_box(u, lower, width)
            kept_count += 1

    rhat = split_rhat(kept)
    max_rhat = float(np.nanmax(rhat)) if np.any(np.isfinite(rhat)) else float("nan")
    if np.isfinite(max_rhat) and max_rhat > rhat_warn:
        warnings.warn(
            f"mcmc split R-hat {max_rhat:.3f} exceeds {rhat_warn}; chains may "
            "not have mixed",
            RuntimeWarning,
            stacklevel=2,
        )

    thetas = kept.reshape(chains * kept_per_chain, q)[:n_draws]
    kept_repeats = int(np.sum(np.all(kept[:, 1:, :] == kept[:, :-1, :], axis=2)))
    return SampleSet(
        thetas=thetas,
        method="mcmc",
        diagnostics={
            "chains": chains,
            "thin": thin,
            "burn_steps": burn_steps,
            "acceptance_burn": accept_burn / (burn_steps * chains),
            "acceptance": accept_post / (post_steps * chains),
            "rhat": rhat.tolist(),
            "max_rhat": max_rhat,
            "proposal_log_scale": float(log_scale),
            "kept_repeats": kept_repeats,
            "n_culled": n_culled,
            "acceptance_jump": (
                jump_accepted / jump_proposed if jump_proposed else float("nan")
            ),
            "acceptance_de": (
                de_accepted / de_proposed if de_proposed else float("nan")
            ),
        },
    )


def sample_posterior(target, config: SamplerConfig, seed_key: Sequence) -> SampleSet:
    """Dispatch on the configured sampling method."""
    if config.method == "rejection":
        return rejection_sample(target, config.n_draws, seed_key)
    return mcmc_sample(
        target,
        config.n_draws,
        seed_key,
        chains=config.chains,
        thin=config.thin,
        burn_fraction=config.burn_fraction,
    )
