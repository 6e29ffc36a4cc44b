"""Neuron simulator anchors: frozen regression points plus structural laws."""

import numpy as np
import pytest

from fslm._util import rng_for
from fslm.features import detect_spikes
from fslm.sim.hh import (
    HhConstants,
    HhParams,
    SimulationDivergedError,
    StimulusProtocol,
    default_hh_prior,
    exemplar_params,
    gating_steady_state,
    gating_time_constants,
    simulate_hh,
    simulate_hh_batch,
)

PRIOR = default_hh_prior()
MIDPOINT = 0.5 * (PRIOR.lower + PRIOR.upper)


def spike_count(trace) -> int:
    return detect_spikes(trace.times, trace.voltage).n_spikes


def test_constants_derived_quantities():
    c = HhConstants()
    # Q10 temperature factor: 3 ** ((34 - 36) / 10)
    assert c.k_tadj == pytest.approx(3.0 ** (-0.2))
    # membrane area from tau = C * R_in at C = 1 uF/cm^2
    area = c.soma_area_cm2(1.0)
    assert area * 1.0 * 126.2e6 * 1e-6 == pytest.approx(11.97e-3, rel=1e-3)


def test_midpoint_of_prior_box_does_not_spike():
    # frozen regression: the box midpoint sits in a strongly leak-dominated
    # regime and never depolarizes under the default 200 pA step
    trace = simulate_hh(MIDPOINT, StimulusProtocol())
    assert spike_count(trace) == 0
    assert trace.voltage.max() < -40.0


def test_exemplar_point_fires_regular_train():
    trace = simulate_hh(exemplar_params(), StimulusProtocol())
    assert spike_count(trace) == 10  # frozen regression value


def test_low_sodium_cannot_spike():
    params = exemplar_params().to_array().copy()
    params[1] = PRIOR.lower[1]  # g_Na at its lower bound
    trace = simulate_hh(params, StimulusProtocol())
    assert spike_count(trace) == 0


def test_zero_stimulus_settles_to_rest():
    protocol = StimulusProtocol(amplitude_pa=0.0)
    trace = simulate_hh(exemplar_params(), protocol)
    v, dt = trace.voltage, protocol.dt_ms
    lag = int(round(100.0 / dt))
    tail = int(round(200.0 / dt))
    drift = np.abs(v[-tail:] - v[-tail - lag : -lag])
    assert drift.max() < 0.5


def test_simulation_is_pure():
    a = simulate_hh(exemplar_params(), StimulusProtocol())
    b = simulate_hh(exemplar_params(), StimulusProtocol())
    assert a.voltage.tobytes() == b.voltage.tobytes()
    assert a.gating_final.tobytes() == b.gating_final.tobytes()


def test_halving_dt_converges():
    p04 = StimulusProtocol()
    p02 = StimulusProtocol(dt_ms=0.02)
    t04 = simulate_hh(exemplar_params(), p04)
    t02 = simulate_hh(exemplar_params(), p02)
    s04 = detect_spikes(t04.times, t04.voltage)
    s02 = detect_spikes(t02.times, t02.voltage)
    assert s04.n_spikes == s02.n_spikes
    # pointwise agreement away from upstrokes (where timing jitter of a
    # fraction of a sample translates into tens of mV)
    diff = np.abs(t02.voltage[::2] - t04.voltage)
    outside = np.ones_like(diff, dtype=bool)
    for t_thr in s04.threshold_time:
        outside &= ~((t04.times >= t_thr - 2.0) & (t04.times <= t_thr + 6.0))
    assert diff[outside].max() < 2.0


def test_divergence_guard_reports_failure_time():
    params = exemplar_params().to_array().copy()
    params[4] = -0.5  # negative leak conductance: voltage runs away
    with pytest.raises(SimulationDivergedError) as err:
        simulate_hh(params, StimulusProtocol(total_ms=100.0, duration_ms=50.0, onset_ms=10.0))
    assert "diverged" in str(err.value)


def test_batch_matches_single():
    rng = rng_for("hh", "batch")
    thetas = PRIOR.sample(8, rng)
    thetas[0] = exemplar_params().to_array()
    protocol = StimulusProtocol(total_ms=300.0, duration_ms=150.0)
    voltages, gates, diverged = simulate_hh_batch(thetas, protocol)
    for i in range(len(thetas)):
        if diverged[i] >= 0:
            continue
        single = simulate_hh(thetas[i], protocol)
        np.testing.assert_array_equal(voltages[i], single.voltage)
        np.testing.assert_array_equal(gates[i], single.gating_final)


def test_gates_remain_probabilities():
    rng = rng_for("hh", "gates")
    thetas = PRIOR.sample(64, rng)
    _, gates, _ = simulate_hh_batch(thetas, StimulusProtocol(total_ms=200.0, duration_ms=100.0))
    assert np.all(gates >= 0.0) and np.all(gates <= 1.0)


GRID_V = np.arange(-120.0, 61.0, 1.0)


def test_steady_states_are_probabilities_on_grid():
    z = gating_steady_state(GRID_V)
    assert z.shape == (GRID_V.size, 6)
    assert np.all(z >= 0.0) and np.all(z <= 1.0)
    assert np.all(np.isfinite(z))


def test_time_constants_positive_on_grid():
    tau = gating_time_constants(GRID_V)
    assert np.all(tau > 0.0)
    assert np.all(np.isfinite(tau))


def test_rate_singularities_evaluate_by_limit():
    # the sodium/potassium rate functions contain x / (exp(x/c) - 1) terms
    # whose removable singularities fall at fixed offsets from V_T
    v_t = -60.0
    for offset in (13.0, 40.0, 15.0, 10.0):  # alpha_m, beta_m, alpha_n, beta_n
        v_sing = np.array([v_t + offset])
        at = gating_steady_state(v_sing, v_t=v_t)
        near = gating_steady_state(v_sing + 1e-7, v_t=v_t)
        assert np.all(np.isfinite(at))
        np.testing.assert_allclose(at, near, rtol=1e-5)
        tau_at = gating_time_constants(v_sing, v_t=v_t)
        assert np.all(np.isfinite(tau_at)) and np.all(tau_at > 0)


def test_r_ss_rescales_fast_gate_time_constants():
    slow = gating_time_constants(np.array([-50.0]), r_ss=2.0)[0]
    fast = gating_time_constants(np.array([-50.0]), r_ss=1.0)[0]
    # r_SS divides the alpha/beta rates of the five fast gates (m, h, n, q, r),
    # so their tau scales linearly with it; the slow gate p does not use r_SS
    ratio = slow / fast
    np.testing.assert_allclose(ratio[[0, 1, 2, 4, 5]], 2.0, rtol=1e-12)
    assert ratio[3] == pytest.approx(1.0, rel=1e-12)


def test_param_round_trip():
    p = exemplar_params()
    assert HhParams.from_array(p.to_array()) == p
