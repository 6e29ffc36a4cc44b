"""Feature extraction checked on hand-built traces with known geometry."""

import numpy as np
import pytest

from fslm.features import (
    ALL_FEATURES,
    CORE_FEATURES,
    FeatureVector,
    detect_spikes,
    extract_features,
)
from fslm.sim.hh import StimulusProtocol, VoltageTrace, exemplar_params, simulate_hh

DT = 0.1  # ms


def make_trace(voltage: np.ndarray, onset=10.0, duration=30.0) -> VoltageTrace:
    total = (voltage.size - 1) * DT
    protocol = StimulusProtocol(
        amplitude_pa=200.0, onset_ms=onset, duration_ms=duration,
        total_ms=total, dt_ms=DT,
    )
    return VoltageTrace(
        times=np.arange(voltage.size) * DT,
        voltage=voltage,
        gating_final=np.zeros(6),
        protocol=protocol,
    )


def triangle_spike(v, start_idx, peak_v=30.0, rest=-70.0, rise=10, fall=20):
    """Insert a linear up/down spike; returns the inserted peak index."""
    up = np.linspace(rest, peak_v, rise + 1)
    down = np.linspace(peak_v, rest, fall + 1)
    v[start_idx : start_idx + rise + 1] = up
    v[start_idx + rise : start_idx + rise + fall + 1] = down
    return start_idx + rise


def test_detects_single_triangle_spike():
    v = np.full(501, -70.0)
    peak = triangle_spike(v, 150)
    events = detect_spikes(np.arange(v.size) * DT, v)
    assert events.n_spikes == 1
    assert events.peak_index[0] == peak
    assert events.peak_v[0] == pytest.approx(30.0)
    # slope is 100 mV/ms on the rise, so onset is right at the foot
    assert abs(events.onset_index[0] - 150) <= 1


def test_slow_ramp_is_not_a_spike():
    # 2 mV/ms stays far below the 20 mV/ms detection slope
    v = np.full(501, -70.0)
    v[100:401] = np.linspace(-70.0, -10.0, 301)
    events = detect_spikes(np.arange(v.size) * DT, v)
    assert events.n_spikes == 0


def test_subthreshold_blip_rejected_by_confirmation():
    # fast rise that tops out at -40 mV: steep enough, but never reaches the
    # -20 mV confirmation level
    v = np.full(501, -70.0)
    triangle_spike(v, 150, peak_v=-40.0)
    events = detect_spikes(np.arange(v.size) * DT, v)
    assert events.n_spikes == 0


def test_zero_spike_trace_features():
    v = np.full(501, -70.0)
    fv = extract_features(make_trace(v))
    assert fv["APC"] == 0.0
    assert fv.valid[fv.names.index("APC")]
    for name in ("APT", "APA", "APW", "AHP", "latency", "APA_adapt"):
        assert not fv.valid[fv.names.index(name)]
        assert np.isnan(fv[name])
    # subthreshold voltage statistics remain defined
    for name in ("mean_Vm", "var_Vm", "mean_Vrest"):
        assert fv.valid[fv.names.index(name)]
    assert fv["mean_Vrest"] == pytest.approx(-70.0)
    assert fv["mean_Vm"] == pytest.approx(-70.0)
    assert fv["var_Vm"] == pytest.approx(0.0)


def test_two_spike_trace_third_spike_features_invalid():
    v = np.full(501, -70.0)
    triangle_spike(v, 150)
    triangle_spike(v, 300)
    fv = extract_features(make_trace(v), feature_set=ALL_FEATURES)
    assert fv["APC"] == 2.0
    for name in ("APT_3", "APA_3", "APW_3", "AHP_3"):
        assert not fv.valid[fv.names.index(name)]
    # first-spike features exist and adaptation between two equal spikes is 0
    assert fv.valid[fv.names.index("APT")]
    assert fv["APA_adapt"] == pytest.approx(0.0, abs=1e-12)


def test_amplitude_and_width_positive_whenever_valid():
    trace = simulate_hh(exemplar_params(), StimulusProtocol())
    fv = extract_features(trace)
    assert fv.all_valid
    assert fv["APA"] > 0.0
    assert fv["APW"] > 0.0
    assert fv["AHP"] > 0.0


def test_amplitude_is_peak_minus_threshold():
    trace = simulate_hh(exemplar_params(), StimulusProtocol())
    events = detect_spikes(trace.times, trace.voltage)
    fv = extract_features(trace)
    assert fv["APT"] == pytest.approx(events.threshold_v[0])
    assert fv["APA"] == pytest.approx(events.peak_v[0] - events.threshold_v[0])


def test_latency_measured_from_stimulus_onset():
    trace = simulate_hh(exemplar_params(), StimulusProtocol())
    events = detect_spikes(trace.times, trace.voltage)
    fv = extract_features(trace)
    assert fv["latency"] == pytest.approx(
        events.threshold_time[0] - trace.protocol.onset_ms
    )


def test_spikes_outside_stimulus_window_not_counted():
    v = np.full(501, -70.0)
    triangle_spike(v, 20)  # t = 2 ms, before the 10 ms onset
    triangle_spike(v, 200)  # t = 20 ms, inside the window
    fv = extract_features(make_trace(v))
    assert fv["APC"] == 1.0


def test_triangle_half_width_matches_geometry():
    # symmetric rise 1 ms (10 samples), fall 2 ms (20 samples): half level is
    # crossed at half the rise and half the fall
    v = np.full(501, -70.0)
    triangle_spike(v, 150, peak_v=30.0, rise=10, fall=20)
    fv = extract_features(make_trace(v))
    assert fv["APW"] == pytest.approx(1.5, rel=0.2)


def test_unknown_feature_name_rejected():
    trace = simulate_hh(exemplar_params(), StimulusProtocol())
    with pytest.raises(ValueError, match="unknown feature"):
        extract_features(trace, feature_set=("APT", "bogus"))


def test_feature_vector_subset_and_lookup():
    fv = FeatureVector(("a", "b"), np.array([1.0, 2.0]), np.array([True, False]))
    sub = fv.subset(("b",))
    assert sub.names == ("b",)
    assert sub.values[0] == 2.0
    assert not sub.valid[0]
    with pytest.raises(ValueError):
        FeatureVector(("a",), np.array([1.0, 2.0]), np.array([True, True]))


def test_core_is_prefix_of_all():
    assert ALL_FEATURES[: len(CORE_FEATURES)] == CORE_FEATURES
    assert len(set(ALL_FEATURES)) == len(ALL_FEATURES)
