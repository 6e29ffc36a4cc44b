"""Spike detection and summary features for voltage traces.

A spike begins where dV/dt crosses a threshold slope upward and the voltage
subsequently exceeds a confirmation level within a short window; its peak is
the voltage maximum between that onset and the next candidate onset (capped
at a few ms).  Features are computed from the spikes whose onsets fall inside
the stimulus window, plus windowed statistics of the voltage itself.  Every
feature carries a validity flag instead of a silent fill value: quantities
that need k spikes are flagged invalid on traces with fewer, counts and
voltage statistics are always valid.

All windows are referenced to the stimulus onset (and the start of the
trace), so shifting trace and stimulus together by any amount leaves every
feature unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fslm.sim.hh import VoltageTrace

#: Compact feature set used by the neuron pipelines.
CORE_FEATURES = (
    "APT",
    "APA",
    "APW",
    "AHP",
    "APA_adapt",
    "latency",
    "APC",
    "mean_Vm",
    "var_Vm",
    "mean_Vrest",
)

#: Additional summary statistics for the wide baseline set.
EXTENDED_FEATURES = (
    "APT_3",
    "APA_3",
    "APW_3",
    "AHP_3",
    "APC_T1_8",
    "APC_T1_4",
    "APC_T1_2",
    "APC_T2_2",
    "APA_adapt_mean",
    "CV_APA",
    "ISI_adapt",
    "CV_ISI",
    "std_Vrest",
)

ALL_FEATURES = CORE_FEATURES + EXTENDED_FEATURES


@dataclass(frozen=True)
class SpikeEvents:
    """Per-spike onset/threshold/peak data, one row per detected spike."""

    onset_index: np.ndarray
    threshold_time: np.ndarray
    threshold_v: np.ndarray
    peak_index: np.ndarray
    peak_time: np.ndarray
    peak_v: np.ndarray

    @property
    def n_spikes(self) -> int:
        return int(self.onset_index.size)


@dataclass(frozen=True)
class FeatureVector:
    """Feature values aligned with ``names``; ``valid`` marks defined entries."""

    names: tuple[str, ...]
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != (len(self.names),) or valid.shape != values.shape:
            raise ValueError("names, values, and valid must have matching lengths")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def all_valid(self) -> bool:
        return bool(self.valid.all())

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def subset(self, names: tuple[str, ...]) -> "FeatureVector":
        idx = [self.names.index(n) for n in names]
        return FeatureVector(tuple(names), self.values[idx], self.valid[idx])


def detect_spikes(
    times: np.ndarray,
    voltage: np.ndarray,
    dvdt_threshold: float = 20.0,  # mV/ms
    confirm_level: float = -20.0,  # mV the upstroke must reach ...
    confirm_window_ms: float = 2.0,  # ... within this long after onset
    peak_window_ms: float = 5.0,
) -> SpikeEvents:
    """Detect action potentials on a regularly sampled trace.

    The onset sample is the first where the centred dV/dt reaches
    ``dvdt_threshold`` from below; a candidate is kept only if the voltage
    reaches ``confirm_level`` within ``confirm_window_ms``.  Peaks are voltage
    maxima between onset and the next candidate (at most ``peak_window_ms``
    later), which keeps events disjoint even at high firing rates.
    """
    times = np.asarray(times, dtype=np.float64)
    voltage = np.asarray(voltage, dtype=np.float64)
    if times.shape != voltage.shape or times.ndim != 1:
        raise ValueError("times and voltage must be equal-length 1-D arrays")
    empty = SpikeEvents(*(np.empty(0) for _ in range(6)))
    if times.size < 3:
        return empty
    dt = float(times[1] - times[0])

    dvdt = np.empty_like(voltage)
    dvdt[1:-1] = (voltage[2:] - voltage[:-2]) / (2.0 * dt)
    dvdt[0] = (voltage[1] - voltage[0]) / dt
    dvdt[-1] = (voltage[-1] - voltage[-2]) / dt

    raw = np.where((dvdt[:-1] < dvdt_threshold) & (dvdt[1:] >= dvdt_threshold))[0] + 1
    if raw.size == 0:
        return empty

    confirm_n = max(1, int(round(confirm_window_ms / dt)))
    peak_n = max(1, int(round(peak_window_ms / dt)))

    onsets: list[int] = []
    peaks: list[int] = []
    last_peak = -1
    for pos, i in enumerate(raw):
        if i <= last_peak:
            continue  # still inside the previous spike
        i = int(i)
        if voltage[i : i + confirm_n + 1].max() < confirm_level:
            continue
        stop = i + peak_n
        if pos + 1 < raw.size:
            stop = min(stop, int(raw[pos + 1]))
        stop = min(stop, voltage.size - 1)
        peak = i + int(np.argmax(voltage[i : stop + 1]))
        onsets.append(i)
        peaks.append(peak)
        last_peak = peak

    onset_idx = np.array(onsets, dtype=np.int64)
    peak_idx = np.array(peaks, dtype=np.int64)
    return SpikeEvents(
        onset_index=onset_idx,
        threshold_time=times[onset_idx],
        threshold_v=voltage[onset_idx],
        peak_index=peak_idx,
        peak_time=times[peak_idx],
        peak_v=voltage[peak_idx],
    )


def _half_width(
    times: np.ndarray,
    voltage: np.ndarray,
    onset: int,
    peak: int,
    stop: int,
) -> float:
    """Spike width (ms) at half height between threshold and peak voltage.

    Both crossings are located by linear interpolation between samples;
    returns NaN if either crossing is missing (malformed spike shape).
    """
    half = 0.5 * (voltage[onset] + voltage[peak])

    t_up = np.nan
    for i in range(onset, peak):
        if voltage[i] <= half <= voltage[i + 1]:
            frac = (half - voltage[i]) / (voltage[i + 1] - voltage[i])
            t_up = times[i] + frac * (times[i + 1] - times[i])
            break
    t_down = np.nan
    for i in range(peak, min(stop, voltage.size - 1)):
        if voltage[i] >= half >= voltage[i + 1]:
            frac = (voltage[i] - half) / (voltage[i] - voltage[i + 1])
            t_down = times[i] + frac * (times[i + 1] - times[i])
            break
    return float(t_down - t_up)


def extract_features(
    trace: VoltageTrace,
    feature_set: tuple[str, ...] = CORE_FEATURES,
    dvdt_threshold: float = 20.0,
    ahp_window_ms: float = 50.0,
) -> FeatureVector:
    """Compute the requested features from one voltage trace."""
    unknown = [n for n in feature_set if n not in ALL_FEATURES]
    if unknown:
        raise ValueError(f"unknown feature names: {unknown}")

    times, v = trace.times, trace.voltage
    proto = trace.protocol
    dt = proto.dt_ms
    onset_ms = proto.onset_ms
    duration_ms = proto.duration_ms
    t0 = float(times[0])
    i_on = int(round((onset_ms - t0) / dt))
    i_off = int(round((onset_ms + duration_ms - t0) / dt))

    spikes = detect_spikes(times, v, dvdt_threshold=dvdt_threshold)
    in_win = (spikes.threshold_time >= onset_ms) & (
        spikes.threshold_time < onset_ms + duration_ms
    )
    s_on = spikes.onset_index[in_win]
    s_pk = spikes.peak_index[in_win]
    s_tt = spikes.threshold_time[in_win]
    s_tv = spikes.threshold_v[in_win]
    s_pv = spikes.peak_v[in_win]
    m = int(s_on.size)
    amplitudes = s_pv - s_tv
    isis = np.diff(s_tt)

    def nth_spike_stop(k: int) -> int:
        """Index bounding spike k's post-peak window (next onset or +ahp)."""
        stop = int(s_pk[k] + round(ahp_window_ms / dt))
        if k + 1 < m:
            stop = min(stop, int(s_on[k + 1]))
        return min(stop, v.size - 1)

    def spike_features(k: int) -> dict[str, float]:
        stop = nth_spike_stop(k)
        trough = float(v[int(s_pk[k]) : stop + 1].min())
        return {
            "APT": float(s_tv[k]),
            "APA": float(amplitudes[k]),
            "APW": _half_width(times, v, int(s_on[k]), int(s_pk[k]), stop),
            "AHP": float(s_tv[k]) - trough,
        }

    def window_count(lo_frac: float, hi_frac: float) -> int:
        lo = onset_ms + lo_frac * duration_ms
        hi = onset_ms + hi_frac * duration_ms
        return int(np.sum((s_tt >= lo) & (s_tt < hi)))

    values: dict[str, float] = {}
    flags: dict[str, bool] = {}

    def put(name: str, value: float, ok: bool) -> None:
        values[name] = float(value) if ok and np.isfinite(value) else np.nan
        flags[name] = bool(ok) and bool(np.isfinite(value))

    first = spike_features(0) if m >= 1 else None
    third = spike_features(2) if m >= 3 else None
    for key in ("APT", "APA", "APW", "AHP"):
        put(key, first[key] if first else np.nan, m >= 1)
        put(f"{key}_3", third[key] if third else np.nan, m >= 3)

    put("latency", s_tt[0] - onset_ms if m >= 1 else np.nan, m >= 1)
    put("APC", m, True)
    put("APC_T1_8", window_count(0.0, 1.0 / 8.0), True)
    put("APC_T1_4", window_count(0.0, 1.0 / 4.0), True)
    put("APC_T1_2", window_count(0.0, 1.0 / 2.0), True)
    put("APC_T2_2", window_count(1.0 / 2.0, 1.0), True)

    if m >= 2:
        pair_adapt = np.diff(amplitudes) / amplitudes[:-1]
        put("APA_adapt", (amplitudes[-1] - amplitudes[0]) / amplitudes[0], True)
        put("APA_adapt_mean", float(np.mean(pair_adapt)), True)
        put("CV_APA", float(np.std(amplitudes) / np.mean(amplitudes)), True)
    else:
        for key in ("APA_adapt", "APA_adapt_mean", "CV_APA"):
            put(key, np.nan, False)

    if isis.size >= 2:
        put("ISI_adapt", (isis[-1] - isis[0]) / isis[0], True)
        put("CV_ISI", float(np.std(isis) / np.mean(isis)), True)
    else:
        put("ISI_adapt", np.nan, False)
        put("CV_ISI", np.nan, False)

    stim_v = v[i_on:i_off]
    put("mean_Vm", float(np.mean(stim_v)), stim_v.size > 0)
    put("var_Vm", float(np.var(stim_v)), stim_v.size > 0)
    rest_v = v[:i_on]
    put("mean_Vrest", float(np.mean(rest_v)) if rest_v.size else np.nan, rest_v.size > 0)
    put("std_Vrest", float(np.std(rest_v)) if rest_v.size else np.nan, rest_v.size > 0)

    ordered = np.array([values[n] for n in feature_set])
    ordered_ok = np.array([flags[n] for n in feature_set])
    return FeatureVector(tuple(feature_set), ordered, ordered_ok)
