"""Single-compartment Hodgkin-Huxley neuron under a square current step.

The membrane carries five currents: transient Na, delayed-rectifier K, a slow
non-inactivating K (M) current, passive leak, and a high-threshold Ca (L)
current.  Kinetics follow Pospischil et al. 2008 (Biol Cybern 99:427-441);
see ``fslm._core.fallback.hh_rate_constants`` for the rate expressions and
their literature sources.  All conductances are membrane densities (mS/cm^2),
voltages are mV, and time is ms, so the membrane equation integrated here is

    C dV/dt = I_stim / A_soma - g_Na m^3 h (V - E_Na) - g_K n^4 (V - E_K)
              - g_M p (V - E_K) - g_leak (V - E_leak) - g_L q^2 r (V - E_Ca)

with C in uF/cm^2 and the stimulus converted from pA to uA/cm^2 through the
soma area.  The soma area itself is derived from the measured membrane time
constant and input resistance as A = tau / (C * R_in), so a higher-capacitance
cell is modelled as a proportionally smaller one.

Integration uses exponential (exact linear relaxation) updates for both the
gates and the voltage at a fixed step, with gates advanced first; a voltage
excursion beyond +-500 mV is treated as divergence and raised as an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from fslm._core import get_backend
from fslm._core.fallback import GATE_NAMES, hh_rate_constants
from fslm.sim.prior import BoxPrior

HH_PARAM_NAMES = (
    "C",
    "g_Na",
    "g_K",
    "g_M",
    "g_leak",
    "g_L",
    "tau_max",
    "V_T",
    "E_leak",
    "r_SS",
)


class SimulationDivergedError(RuntimeError):
    """Voltage left the +-500 mV guard band (or turned non-finite)."""

    def __init__(self, step: int, time_ms: float):
        self.step = int(step)
        self.time_ms = float(time_ms)
        super().__init__(
            f"voltage diverged at step {self.step} (t = {self.time_ms:.3f} ms)"
        )


@dataclass(frozen=True)
class HhConstants:
    """Fixed physiological constants shared by all simulations."""

    e_na: float = 71.1  # mV
    e_k: float = -101.3  # mV
    e_ca: float = 131.1  # mV
    t_kinetics: float = 36.0  # degC, temperature the rate constants refer to
    t_experiment: float = 34.0  # degC, temperature being simulated
    q10: float = 3.0
    tau_membrane_ms: float = 11.97  # measured membrane time constant
    r_input_mohm: float = 126.2  # measured input resistance

    @property
    def k_tadj(self) -> float:
        """Q10 temperature factor applied to every gating rate."""
        return self.q10 ** ((self.t_experiment - self.t_kinetics) / 10.0)

    def soma_area_cm2(self, capacitance: float | np.ndarray) -> float | np.ndarray:
        """Soma area (cm^2) implied by tau = R_in * C * A."""
        return self.tau_membrane_ms * 1e-3 / (capacitance * self.r_input_mohm)


@dataclass(frozen=True)
class StimulusProtocol:
    """Square current step riding on a zero-current baseline."""

    amplitude_pa: float = 200.0
    onset_ms: float = 100.0
    duration_ms: float = 600.0
    total_ms: float = 800.0
    dt_ms: float = 0.04
    v0: float = -70.0  # holding potential; gates start at steady state here

    def __post_init__(self) -> None:
        if self.dt_ms <= 0:
            raise ValueError("dt_ms must be positive")
        if self.onset_ms < 0 or self.duration_ms <= 0:
            raise ValueError("onset_ms must be >= 0 and duration_ms > 0")
        if self.onset_ms + self.duration_ms > self.total_ms + 1e-9:
            raise ValueError("stimulus must end within the simulated window")

    @property
    def n_steps(self) -> int:
        return int(round(self.total_ms / self.dt_ms))

    @property
    def on_index(self) -> int:
        return int(round(self.onset_ms / self.dt_ms))

    @property
    def off_index(self) -> int:
        return int(round((self.onset_ms + self.duration_ms) / self.dt_ms))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt_ms


@dataclass(frozen=True)
class HhParams:
    """One parameter draw; conductances are densities in mS/cm^2."""

    C: float  # uF/cm^2
    g_Na: float
    g_K: float
    g_M: float
    g_leak: float
    g_L: float
    tau_max: float  # ms, voltage-independent scale of the M-current time constant
    V_T: float  # mV, spike-threshold shift of the Na/K kinetics
    E_leak: float  # mV
    r_SS: float  # dimensionless slow-down of the alpha/beta gate kinetics

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "HhParams":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(HH_PARAM_NAMES),):
            raise ValueError(f"expected {len(HH_PARAM_NAMES)} parameters")
        return cls(*(float(v) for v in values))


def default_hh_prior() -> BoxPrior:
    """Uniform box over the ten free parameters (tau_max bounds in ms)."""
    return BoxPrior(
        lower=np.array([0.4, 0.5, 1e-4, -3e-5, 1e-4, -3e-5, 50.0, -90.0, -110.0, 0.1]),
        upper=np.array([3.0, 80.0, 30.0, 0.6, 0.8, 0.6, 3000.0, -40.0, -50.0, 3.0]),
        names=HH_PARAM_NAMES,
    )


def exemplar_params() -> "HhParams":
    """Reference parameter point inside the prior box, in the spiking regime.

    The bundled experiments and regression tests use the trace simulated from
    this point as their observed recording: under the default stimulus it
    fires a regular spike train (10 action potentials), so every core feature
    is defined.  The box midpoint is unsuitable as an observation because it
    does not produce sustained spiking.  The fast slow-potassium time constant
    keeps the adaptation timescale observable within the stimulus window, so
    the full posterior constrains ``tau_max`` — important because sample-based
    KL comparisons lose sensitivity in directions the posterior leaves at
    prior width.
    """
    return HhParams(
        C=1.0,
        g_Na=50.0,
        g_K=10.0,
        g_M=0.1,
        g_leak=0.1,
        g_L=0.1,
        tau_max=200.0,
        V_T=-60.0,
        E_leak=-65.0,
        r_SS=1.0,
    )


@dataclass(frozen=True)
class VoltageTrace:
    """Simulated membrane potential plus the final gating state."""

    times: np.ndarray  # ms, length n_steps + 1
    voltage: np.ndarray  # mV
    gating_final: np.ndarray  # (m, h, n, p, q, r) at the last step
    protocol: StimulusProtocol

    @property
    def dt_ms(self) -> float:
        return self.protocol.dt_ms

    def stimulus_current_pa(self) -> np.ndarray:
        """Stimulus waveform aligned with ``times`` (left-edge convention)."""
        steps = np.arange(self.times.size)
        on = (steps >= self.protocol.on_index) & (steps < self.protocol.off_index)
        return np.where(on, self.protocol.amplitude_pa, 0.0)


def gating_steady_state(
    v: float | np.ndarray,
    v_t: float | np.ndarray = -60.0,
    tau_max: float | np.ndarray = 600.0,
    r_ss: float | np.ndarray = 1.0,
    constants: HhConstants = HhConstants(),
) -> np.ndarray:
    """Steady-state open fractions (m, h, n, p, q, r) at voltage ``v``."""
    z_inf, _ = hh_rate_constants(
        np.asarray(v, dtype=np.float64), v_t, tau_max, r_ss, constants.k_tadj
    )
    return z_inf


def gating_time_constants(
    v: float | np.ndarray,
    v_t: float | np.ndarray = -60.0,
    tau_max: float | np.ndarray = 600.0,
    r_ss: float | np.ndarray = 1.0,
    constants: HhConstants = HhConstants(),
) -> np.ndarray:
    """Effective gate time constants (ms) including temperature and r_SS."""
    _, tau_eff = hh_rate_constants(
        np.asarray(v, dtype=np.float64), v_t, tau_max, r_ss, constants.k_tadj
    )
    return tau_eff


V_DIVERGENCE_MV = 500.0


def simulate_hh_batch(
    params: np.ndarray,
    protocol: StimulusProtocol = StimulusProtocol(),
    constants: HhConstants = HhConstants(),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate a (B, 10) batch of parameter rows.

    Returns ``(voltages (B, T+1), gating_final (B, 6), diverge_step (B,))``
    where ``diverge_step`` is -1 for clean rows.  Diverged rows keep their
    last voltage for the remainder of the trace; callers decide whether that
    is an error (``simulate_hh``) or an invalid dataset row.
    """
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if params.shape[1] != len(HH_PARAM_NAMES):
        raise ValueError(f"parameter rows must have {len(HH_PARAM_NAMES)} entries")
    area = constants.soma_area_cm2(params[:, 0])
    i_dens = protocol.amplitude_pa * 1e-6 / area  # uA/cm^2
    gates0 = gating_steady_state(
        np.full(params.shape[0], protocol.v0),
        v_t=params[:, 7],
        tau_max=params[:, 6],
        r_ss=params[:, 9],
        constants=constants,
    )
    backend = get_backend()
    return backend.hh_integrate_batch(
        params,
        i_dens,
        gates0,
        protocol.dt_ms,
        protocol.n_steps,
        protocol.on_index,
        protocol.off_index,
        protocol.v0,
        constants.e_na,
        constants.e_k,
        constants.e_ca,
        constants.k_tadj,
        V_DIVERGENCE_MV,
    )


def simulate_hh(
    params: HhParams | np.ndarray,
    protocol: StimulusProtocol = StimulusProtocol(),
    constants: HhConstants = HhConstants(),
) -> VoltageTrace:
    """Simulate one trace; raises SimulationDivergedError on a voltage blow-up."""
    row = params.to_array() if isinstance(params, HhParams) else np.asarray(params)
    voltages, gates, diverged = simulate_hh_batch(row[None, :], protocol, constants)
    if diverged[0] >= 0:
        raise SimulationDivergedError(diverged[0], diverged[0] * protocol.dt_ms)
    return VoltageTrace(
        times=protocol.times(),
        voltage=voltages[0],
        gating_final=gates[0],
        protocol=protocol,
    )


__all__ = [
    "GATE_NAMES",
    "HH_PARAM_NAMES",
    "HhConstants",
    "HhParams",
    "SimulationDivergedError",
    "StimulusProtocol",
    "VoltageTrace",
    "default_hh_prior",
    "exemplar_params",
    "gating_steady_state",
    "gating_time_constants",
    "simulate_hh",
    "simulate_hh_batch",
]
