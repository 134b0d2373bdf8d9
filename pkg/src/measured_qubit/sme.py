"""Per-trajectory stochastic integration of the Bayesian state-update
equations for a qubit under continuous dispersive monitoring.

In Ito form, with detector contrast dI, symmetric noise density S0 and
white noise xi(t) of per-step variance S0/(2 dt), the conditional state
(rho11, rho12) obeys

    d rho11 = [unitary part] dt + rho11 (1 - rho11) (2 dI / S0) xi dt
    d rho12 = [unitary part] dt
              + [- rho12 dI^2/(4 S0) + (1 - 2 rho11) rho12 (dI/S0) xi] dt

where the unitary part is the commutator flow of H(t) and everything
proportional to dI is detector backaction. Each integration step returns
the two contributions separately; their sum is the step increment
bit-exactly, which is what makes the per-step energy bookkeeping close at
rounding level.

The detector output is I(t) = I0 + (dI/2)(2 rho11 - 1) + xi(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _engine
from ._engine import SCHEMES, IntegrationBlowupError, StepContext, StepThresholds
from .qubit import (
    DensityMatrix,
    DriveProtocol,
    QubitOperator,
    bloch_coordinates,
    density_from_bloch,
)

__all__ = [
    "DetectorModel",
    "NoiseProcess",
    "StateDelta",
    "StepDecomposition",
    "TrajectoryRecord",
    "IntegrationBlowupError",
    "StepThresholds",
    "SCHEMES",
    "sample_noise",
    "unitary_increment",
    "measurement_increment",
    "stratonovich_measurement_drift",
    "noise_coefficients",
    "detector_current",
    "step",
    "effective_step_hamiltonian",
    "integrate_trajectory",
]

# Philox stream id reserved for initial-state sampling in ensembles
INIT_STREAM_ID = 2**64 - 1


@dataclass(frozen=True)
class DetectorModel:
    """Phenomenological detector: signal contrast, noise density, baseline."""

    delta_i: float
    s0: float
    i0: float = 0.0

    def __post_init__(self) -> None:
        if self.delta_i != 0.0 and self.s0 <= 0.0:
            raise ValueError("s0 must be positive for a nonzero contrast")
        if self.s0 < 0.0:
            raise ValueError("s0 must be nonnegative")

    @property
    def tau_m(self) -> float:
        """Measurement time 2 S0 / dI^2 (inf for a decoupled detector)."""
        if self.delta_i == 0.0:
            return math.inf
        return 2.0 * self.s0 / self.delta_i**2

    @property
    def dephasing_rate(self) -> float:
        """Ensemble coherence decay rate dI^2 / (4 S0)."""
        if self.delta_i == 0.0:
            return 0.0
        return self.delta_i**2 / (4.0 * self.s0)

    @staticmethod
    def off() -> "DetectorModel":
        return DetectorModel(0.0, 0.0, 0.0)


def _philox(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoiseProcess:
    """Counter-keyed Gaussian noise stream for one trajectory.

    The sample sequence is a pure function of (seed, stream_id), so results
    do not depend on scheduling or on which other trajectories run.
    """

    seed: int
    stream_id: int
    sigma_step: float

    @staticmethod
    def for_run(seed: int, stream_id: int, s0: float, dt: float) -> "NoiseProcess":
        if dt <= 0:
            raise ValueError("dt must be positive")
        return NoiseProcess(seed, stream_id, math.sqrt(s0 / (2.0 * dt)))

    def sample_block(self, count: int) -> np.ndarray:
        """First ``count`` noise values of this stream."""
        draws = _philox(self.seed, self.stream_id).standard_normal(count)
        return self.sigma_step * draws

    def sample(self, k: int) -> float:
        """k-th noise value; deterministic in (seed, stream_id, k)."""
        if k < 0:
            raise ValueError("step index must be nonnegative")
        return float(self.sample_block(k + 1)[k])


def sample_noise(noise: NoiseProcess, k: int) -> float:
    return noise.sample(k)


class StateDelta(NamedTuple):
    """Traceless state increment; rho22 changes by -drho11 implicitly."""

    drho11: float
    drho12: complex

    def bloch(self) -> tuple[float, float, float]:
        return (2.0 * self.drho12.real, 2.0 * self.drho12.imag, 2.0 * self.drho11)


ZERO_DELTA = StateDelta(0.0, 0j)


@dataclass(frozen=True)
class StepDecomposition:
    """Unitary/measurement split of one integration step."""

    d_rho_w: StateDelta
    d_rho_q: StateDelta
    xi: float

    def total(self) -> StateDelta:
        return StateDelta(
            self.d_rho_w.drho11 + self.d_rho_q.drho11,
            self.d_rho_w.drho12 + self.d_rho_q.drho12,
        )


@dataclass
class TrajectoryRecord:
    """Time series of one realization.

    ``states`` has steps+1 entries; ``xis``, ``currents``,
    ``decompositions``, ``h_nodes`` and ``gains`` have one entry per step.
    ``h_nodes[k]`` is the effective Hamiltonian of step k, i.e. the
    bookkeeping Hamiltonian attached to grid point k+1.
    """

    times: np.ndarray
    states: list[DensityMatrix]
    xis: np.ndarray
    currents: np.ndarray
    decompositions: list[StepDecomposition]
    h_nodes: list[QubitOperator]
    gains: np.ndarray
    ledger: object = None  # ThermoLedger, attached by integrate_trajectory

    def initial_state(self) -> DensityMatrix:
        return self.states[0]

    def final_state(self) -> DensityMatrix:
        return self.states[-1]


def unitary_increment(rho: DensityMatrix, h: QubitOperator, dt: float) -> StateDelta:
    """First-order commutator increment -i [h, rho] dt / hbar (hbar = 1).

    tr(h * increment) vanishes identically, the defining property of the
    unitary part of a step.
    """
    p = rho.rho11
    u = rho.rho12.real
    v = rho.rho12.imag
    om = 1.0 - 2.0 * p
    dp = 2.0 * (h.cy * u - h.cx * v) * dt
    du = (2.0 * h.cz * v + h.cy * om) * dt
    dv = (-2.0 * h.cz * u - h.cx * om) * dt
    return StateDelta(dp, complex(du, dv))


def measurement_increment(
    rho: DensityMatrix, xi: float, dt: float, det: DetectorModel
) -> StateDelta:
    """Ito-form detector increment; vanishes on sigma_z eigenstates."""
    if det.delta_i == 0.0:
        return ZERO_DELTA
    p = rho.rho11
    r12 = rho.rho12
    k0 = det.delta_i / det.s0
    dp = p * (1.0 - p) * 2.0 * k0 * xi * dt
    dr12 = (-r12 * det.dephasing_rate + (1.0 - 2.0 * p) * r12 * k0 * xi) * dt
    return StateDelta(dp, dr12)


def noise_coefficients(rho: DensityMatrix, det: DetectorModel) -> np.ndarray:
    """Noise-coefficient vector over (rho11, Re rho12, Im rho12)."""
    if det.delta_i == 0.0:
        return np.zeros(3)
    p, u, v = rho.rho11, rho.rho12.real, rho.rho12.imag
    cp, cu, cv = _engine._noise_coeffs(
        np.asarray(p), np.asarray(u), np.asarray(v), det.delta_i / det.s0
    )
    return np.array([float(cp), float(cu), float(cv)])


def stratonovich_measurement_drift(rho: DensityMatrix, det: DetectorModel) -> np.ndarray:
    """Measurement drift converted to Stratonovich form.

    ito_drift - (sigma^2 / 2) (b . grad) b with sigma^2 = S0/2 and b the
    noise-coefficient vector; cross-checked against finite differences in
    the test suite.
    """
    if det.delta_i == 0.0:
        return np.zeros(3)
    p, u, v = rho.rho11, rho.rho12.real, rho.rho12.imag
    d = _engine._stratonovich_drift(
        np.asarray(p), np.asarray(u), np.asarray(v),
        det.delta_i / det.s0, det.dephasing_rate, det.s0,
    )
    return np.array([float(d[0]), float(d[1]), float(d[2])])


def detector_current(rho: DensityMatrix, xi: float, det: DetectorModel) -> float:
    """I = I0 + (dI/2)(2 rho11 - 1) + xi."""
    return det.i0 + 0.5 * det.delta_i * (2.0 * rho.rho11 - 1.0) + xi


def effective_step_hamiltonian(
    t: float, dt: float, protocol: DriveProtocol, gain: float | None = None
) -> QubitOperator:
    """Bookkeeping Hamiltonian of the step [t, t+dt].

    The generator of the step's exact rotation: the Gauss-node average of
    the drive plus a higher-order commutator correction that carries a
    small sigma_y component while the drive ramps.
    """
    proto = protocol if gain is None else DriveProtocol(
        g=gain, nu=protocol.nu, tau=protocol.tau,
        epsilon=protocol.epsilon, hbar=protocol.hbar,
    )
    ctx = StepContext.build(proto, 0.0, 0.0, 0.0, "stratonovich-heun")
    out = _engine.step_arrays(
        ctx, t, dt, np.zeros(1), np.zeros(1), np.ones(1), np.zeros(1), ctx.g
    )
    cx, cy, cz = out["c_now"]
    return QubitOperator(0.0, float(cx[0]), float(cy[0]), float(cz[0]))


def step(
    rho: DensityMatrix,
    t: float,
    dt: float,
    protocol: DriveProtocol,
    det: DetectorModel,
    xi: float,
    scheme: str = "stratonovich-heun",
    gain: float | None = None,
    thresholds: StepThresholds = StepThresholds(),
) -> tuple[DensityMatrix, StepDecomposition]:
    """One integration step starting at time t.

    The returned state equals the input state plus d_rho_w plus d_rho_q
    exactly; the measurement increment absorbs any physicality projection.
    """
    ctx = StepContext.build(protocol, det.delta_i, det.s0, det.i0, scheme, thresholds)
    x, y, z = bloch_coordinates(rho)
    out = _engine.step_arrays(
        ctx, t, dt,
        np.array([x]), np.array([y]), np.array([z]),
        np.array([xi]),
        protocol.g if gain is None else gain,
    )
    if out["abort_idx"] >= 0:
        raise IntegrationBlowupError(0, 0, out["viol_max"], 0)
    dwx, dwy, dwz = (float(a[0]) for a in out["dw"])
    dqx, dqy, dqz = (float(a[0]) for a in out["dq"])
    dw = StateDelta(dwz / 2.0, complex(dwx / 2.0, dwy / 2.0))
    dq = StateDelta(dqz / 2.0, complex(dqx / 2.0, dqy / 2.0))
    new = DensityMatrix(
        rho.rho11 + dw.drho11 + dq.drho11,
        rho.rho12 + dw.drho12 + dq.drho12,
    )
    return new, StepDecomposition(dw, dq, xi)


def integrate_trajectory(
    init: DensityMatrix,
    protocol: DriveProtocol,
    det: DetectorModel,
    noise: NoiseProcess,
    scheme: str,
    steps: int,
    controller=None,
    thresholds: StepThresholds = StepThresholds(),
) -> TrajectoryRecord:
    """Integrate one trajectory over steps * dt = protocol.tau.

    ``controller``, when given, must expose ``strength`` (the gain-feedback
    f) and ``reference_bloch`` (a (steps+1, 3) target series); the drive
    gain is modulated each step, from the state at step start, before the
    step Hamiltonian is built.
    """
    from .thermo import ThermoLedger

    init.validate(atol=1e-9)
    x, y, z = bloch_coordinates(init)
    noise_mat = noise.sample_block(steps).reshape(steps, 1)
    fstrength = None
    reference = None
    if controller is not None:
        fstrength = controller.strength
        reference = controller.reference_bloch
    ctx = StepContext.build(protocol, det.delta_i, det.s0, det.i0, scheme, thresholds)
    res = _engine.run_paths(
        np.array([x, y, z]), ctx, noise_mat,
        feedback_strength=fstrength, reference=reference,
        record_stride=1, record_steps=True,
        trajectory_offset=noise.stream_id,
    )
    states = [density_from_bloch(*res.record_states[k, 0]) for k in range(steps + 1)]
    decomps = []
    h_nodes = []
    for k in range(steps):
        dwx, dwy, dwz = res.record_dw[k, 0]
        dqx, dqy, dqz = res.record_dq[k, 0]
        decomps.append(
            StepDecomposition(
                StateDelta(dwz / 2.0, complex(dwx / 2.0, dwy / 2.0)),
                StateDelta(dqz / 2.0, complex(dqx / 2.0, dqy / 2.0)),
                float(noise_mat[k, 0]),
            )
        )
        cx, cy, cz = res.h_nodes[k, 0]
        h_nodes.append(QubitOperator(0.0, float(cx), float(cy), float(cz)))
    rec = TrajectoryRecord(
        times=np.arange(steps + 1) * res.dt,
        states=states,
        xis=noise_mat[:, 0].copy(),
        currents=res.record_currents[:, 0].copy(),
        decompositions=decomps,
        h_nodes=h_nodes,
        gains=res.gains[:, 0].copy(),
    )
    rec.ledger = ThermoLedger(
        w_cum=float(res.work[0]),
        q_cum=float(res.heat[0]),
        u0=float(res.u0[0]),
        u_now=float(res.u_final[0]),
        max_residual=res.max_residual,
    )
    return rec
