"""Seeded, order-independent Monte Carlo over trajectories.

Trajectory i draws its noise from a counter-keyed stream (seed, i), so the
result of a run is a pure function of the configuration: chunked, serial
and multi-process executions produce bit-identical results. Statistics are
reduced from per-trajectory arrays gathered in index order.

The deterministic companion is the ensemble-averaged equation of motion:
the noise terms average away and leave the unitary flow plus coherence
decay at rate dI^2/(4 S0). It is integrated with a classical fourth-order
scheme on the same grid and serves as the validation reference for the
Monte Carlo mean.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from ._engine import IntegrationBlowupError, StepContext, StepThresholds
from .feedback import FeedbackParams, reference_trajectory
from .qubit import (
    DensityMatrix,
    DriveProtocol,
    ThermalSpec,
    bloch_coordinates,
    density_from_bloch,
    eigendecompose,
    expectation,
    hamiltonian_at,
    thermal_state,
)
from .sme import INIT_STREAM_ID, DetectorModel, _philox
from .thermo import (
    TransitionColumn,
    TransitionDecomposition,
    assemble_transition_decomposition,
)

__all__ = [
    "InitialState",
    "EnsembleConfig",
    "EnsembleResult",
    "run_ensemble",
    "run_transition_study",
    "lindblad_reference",
]


@dataclass(frozen=True)
class InitialState:
    """Initial condition: thermal mixture, a fixed eigenstate, or explicit.

    A thermal start is realized by mixture sampling: each trajectory starts
    in an eigenstate of H(0), drawn with the Gibbs weights, so projective
    two-point statistics are available for every run.
    """

    kind: str
    beta: float | None = None
    n: int | None = None
    state: DensityMatrix | None = None

    @staticmethod
    def thermal(beta: float) -> "InitialState":
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        return InitialState(kind="thermal", beta=beta)

    @staticmethod
    def eigenstate(n: int) -> "InitialState":
        if n not in (0, 1):
            raise ValueError("eigenstate index must be 0 or 1")
        return InitialState(kind="eigenstate", n=n)

    @staticmethod
    def explicit(state: DensityMatrix) -> "InitialState":
        state.validate()
        return InitialState(kind="explicit", state=state)


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int
    seed: int
    scheme: str
    steps: int
    record_stride: int | None = None
    initial_state: InitialState = InitialState.thermal(10.0)
    thresholds: StepThresholds = StepThresholds()

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative 64-bit integer")
        if self.record_stride is not None and (
            self.record_stride <= 0 or self.steps % self.record_stride != 0
        ):
            raise ValueError("record_stride must divide steps")


@dataclass
class EnsembleResult:
    """Ensemble statistics plus per-trajectory summaries.

    mean_state/se_state hold (rho11, Re rho12, Im rho12) at the recorded
    times. Transition columns are present when all trajectories start in
    eigenstates of H(0). Per-trajectory arrays are ordered by the global
    trajectory index.
    """

    times: np.ndarray | None
    mean_state: np.ndarray | None
    se_state: np.ndarray | None
    columns: dict[int, TransitionColumn]
    w_mean: float
    w_var: float
    q_mean: float
    q_var: float
    clamp_events: int
    clamp_fraction: float
    max_residual: float
    max_violation: float
    final_bloch: np.ndarray
    sum_dw: np.ndarray
    sum_dq: np.ndarray
    work: np.ndarray
    heat: np.ndarray
    u0: np.ndarray
    u_final: np.ndarray
    init_index: np.ndarray      # -1 for explicit starts
    ptau: np.ndarray | None     # (n, 2) per-trajectory final-basis probabilities
    dpw: np.ndarray | None
    dpq: np.ndarray | None
    purity_defect: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def decomposition(self) -> TransitionDecomposition:
        if 0 not in self.columns or 1 not in self.columns:
            raise ValueError("both initial eigenstates are required")
        return assemble_transition_decomposition(self.columns[0], self.columns[1])

    def to_json_bytes(self) -> bytes:
        """Stable byte serialization used by the reproducibility contract."""

        def enc(a):
            if a is None:
                return None
            if isinstance(a, np.ndarray):
                return a.tolist()
            return a

        cols = {
            str(k): {
                "p_tau": c.p_tau.tolist(),
                "dp_w": c.dp_w.tolist(),
                "dp_q": c.dp_q.tolist(),
                "se_p_tau": c.se_p_tau.tolist(),
                "se_dp_w": c.se_dp_w.tolist(),
                "se_dp_q": c.se_dp_q.tolist(),
                "n_traj": c.n_traj,
            }
            for k, c in sorted(self.columns.items())
        }
        body = {
            "times": enc(self.times),
            "mean_state": enc(self.mean_state),
            "se_state": enc(self.se_state),
            "columns": cols,
            "w_mean": self.w_mean,
            "w_var": self.w_var,
            "q_mean": self.q_mean,
            "q_var": self.q_var,
            "clamp_events": self.clamp_events,
            "max_residual": self.max_residual,
            "max_violation": self.max_violation,
            "final_bloch": enc(self.final_bloch),
            "work": enc(self.work),
            "heat": enc(self.heat),
        }
        return json.dumps(body, sort_keys=True).encode()


def _eigen_bloch(basis, n: int) -> np.ndarray:
    proj = (basis.proj_minus, basis.proj_plus)[n]
    return np.array([2 * proj.cx, 2 * proj.cy, 2 * proj.cz])


def _assign_initial_states(cfg: EnsembleConfig, protocol: DriveProtocol):
    """Per-trajectory initial eigenstate index (or -1) and Bloch vectors."""
    basis0 = eigendecompose(hamiltonian_at(0.0, protocol))
    if cfg.initial_state.kind == "explicit":
        r0 = np.array(bloch_coordinates(cfg.initial_state.state))
        return np.full(cfg.n_traj, -1), {-1: r0}, basis0
    if cfg.initial_state.kind == "eigenstate":
        n = cfg.initial_state.n
        return (
            np.full(cfg.n_traj, n),
            {n: _eigen_bloch(basis0, n)},
            basis0,
        )
    rho_th = thermal_state(ThermalSpec(cfg.initial_state.beta), hamiltonian_at(0.0, protocol))
    p_minus = expectation(rho_th, basis0.proj_minus)
    u = _philox(cfg.seed, INIT_STREAM_ID).random(cfg.n_traj)
    idx = np.where(u < p_minus, 0, 1)
    return idx, {0: _eigen_bloch(basis0, 0), 1: _eigen_bloch(basis0, 1)}, basis0


def _chunk_noise(seed: int, indices: np.ndarray, steps: int, sigma: float) -> np.ndarray:
    noise = np.empty((steps, len(indices)))
    for j, gi in enumerate(indices):
        noise[:, j] = _philox(seed, int(gi)).standard_normal(steps)
    noise *= sigma
    return noise


def _run_chunk(payload: dict) -> dict:
    """Worker body: integrate one chunk of one initial-state group."""
    ctx: StepContext = payload["ctx"]
    indices: np.ndarray = payload["indices"]
    steps = payload["steps"]
    sigma = payload["sigma"]
    noise = _chunk_noise(payload["seed"], indices, steps, sigma)
    try:
        res = _engine.run_paths(
            payload["init_bloch"],
            ctx,
            noise,
            feedback_strength=payload["fstrength"],
            reference=payload["reference"],
            record_stride=payload["record_stride"],
        )
    except IntegrationBlowupError as err:
        return {
            "error": (
                err.step,
                int(indices[err.trajectory]),
                err.violation,
                err.clamp_events,
            )
        }
    out = {
        "indices": indices,
        "final": res.final,
        "sum_dw": res.sum_dw,
        "sum_dq": res.sum_dq,
        "work": res.work,
        "heat": res.heat,
        "u0": res.u0,
        "u_final": res.u_final,
        "max_residual": res.max_residual,
        "max_violation": res.max_violation,
        "clamp_events": res.clamp_events,
    }
    if res.record_states is not None:
        out["record_times"] = res.record_times
        out["record_states"] = res.record_states
    return out


def run_ensemble(
    cfg: EnsembleConfig,
    protocol: DriveProtocol,
    det: DetectorModel,
    fb: FeedbackParams | None = None,
    chunk_size: int | None = None,
    n_jobs: int = 1,
) -> EnsembleResult:
    """Integrate cfg.n_traj trajectories and reduce their statistics.

    The result is bit-identical for a fixed configuration regardless of
    chunk size or worker count: noise streams are keyed by global
    trajectory index and reductions run over index-ordered arrays.
    """
    dt = protocol.tau / cfg.steps
    sigma = math.sqrt(det.s0 / (2.0 * dt))
    ctx = StepContext.build(
        protocol, det.delta_i, det.s0, det.i0, cfg.scheme, cfg.thresholds
    )
    init_index, init_bloch_map, basis0 = _assign_initial_states(cfg, protocol)

    n = cfg.n_traj
    final = np.empty((n, 3))
    sum_dw = np.empty((n, 3))
    sum_dq = np.empty((n, 3))
    work = np.empty(n)
    heat = np.empty(n)
    u0 = np.empty(n)
    u_final = np.empty(n)
    kept = cfg.steps // cfg.record_stride + 1 if cfg.record_stride else 0
    rec_states = np.empty((kept, n, 3)) if kept else None
    rec_times = None
    max_residual = 0.0
    max_violation = 0.0
    clamp_events = 0

    feedback_on = fb is not None and fb.enabled and fb.f > 0.0
    payloads = []
    for key, r0 in init_bloch_map.items():
        group = np.nonzero(init_index == key)[0]
        if len(group) == 0:
            continue
        reference = None
        if feedback_on:
            reference = reference_trajectory(
                density_from_bloch(*r0), protocol, cfg.steps
            ).bloch
        size = chunk_size or len(group)
        for lo in range(0, len(group), size):
            payloads.append(
                {
                    "ctx": ctx,
                    "indices": group[lo : lo + size],
                    "steps": cfg.steps,
                    "sigma": sigma,
                    "seed": cfg.seed,
                    "init_bloch": r0,
                    "fstrength": fb.f if feedback_on else None,
                    "reference": reference,
                    "record_stride": cfg.record_stride,
                }
            )

    if n_jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_chunk, payloads))
    else:
        results = [_run_chunk(p) for p in payloads]

    for res in results:
        if "error" in res:
            step_k, traj, viol, events = res["error"]
            raise IntegrationBlowupError(step_k, traj, viol, events)
        idx = res["indices"]
        final[idx] = res["final"]
        sum_dw[idx] = res["sum_dw"]
        sum_dq[idx] = res["sum_dq"]
        work[idx] = res["work"]
        heat[idx] = res["heat"]
        u0[idx] = res["u0"]
        u_final[idx] = res["u_final"]
        max_residual = max(max_residual, res["max_residual"])
        max_violation = max(max_violation, res["max_violation"])
        clamp_events += res["clamp_events"]
        if kept:
            rec_times = res["record_times"]
            rec_states[:, idx, :] = res["record_states"]

    times = mean_state = se_state = None
    if kept:
        times = rec_times
        # store as (rho11, Re rho12, Im rho12)
        rho_coords = np.empty_like(rec_states)
        rho_coords[..., 0] = (1.0 + rec_states[..., 2]) / 2.0
        rho_coords[..., 1] = rec_states[..., 0] / 2.0
        rho_coords[..., 2] = rec_states[..., 1] / 2.0
        mean_state = rho_coords.mean(axis=1)
        se_state = rho_coords.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean_state)

    columns: dict[int, TransitionColumn] = {}
    ptau_all = dpw_all = dpq_all = None
    if cfg.initial_state.kind in ("thermal", "eigenstate"):
        basis_tau = eigendecompose(hamiltonian_at(protocol.tau, protocol))
        projs = (basis_tau.proj_minus, basis_tau.proj_plus)
        pvecs = np.array([[pr.cx, pr.cy, pr.cz] for pr in projs])
        p0s = np.array([pr.c0 for pr in projs])
        ptau_all = p0s[None, :] + final @ pvecs.T
        dpq_all = sum_dq @ pvecs.T
        base = np.empty((n, 2))
        for key, r0 in init_bloch_map.items():
            group = init_index == key
            base[group] = (p0s + pvecs @ r0)[None, :]
        delta = np.zeros((n, 2))
        for key in init_bloch_map:
            delta[init_index == key, key] = 1.0
        dpw_all = base + sum_dw @ pvecs.T - delta
        for key in sorted(init_bloch_map):
            g = np.nonzero(init_index == key)[0]
            if len(g) == 0:
                continue
            nt = len(g)
            se = (
                (lambda a: a.std(axis=0, ddof=1) / math.sqrt(nt))
                if nt > 1
                else (lambda a: np.zeros(2))
            )
            columns[key] = TransitionColumn(
                n=key,
                p_tau=ptau_all[g].mean(axis=0),
                dp_w=dpw_all[g].mean(axis=0),
                dp_q=dpq_all[g].mean(axis=0),
                se_p_tau=se(ptau_all[g]),
                se_dp_w=se(dpw_all[g]),
                se_dp_q=se(dpq_all[g]),
                n_traj=nt,
            )

    purity_defect = np.abs(1.0 - (final**2).sum(axis=1))
    return EnsembleResult(
        times=times,
        mean_state=mean_state,
        se_state=se_state,
        columns=columns,
        w_mean=float(work.mean()),
        w_var=float(work.var(ddof=1)) if n > 1 else 0.0,
        q_mean=float(heat.mean()),
        q_var=float(heat.var(ddof=1)) if n > 1 else 0.0,
        clamp_events=clamp_events,
        clamp_fraction=clamp_events / (n * cfg.steps),
        max_residual=max_residual,
        max_violation=max_violation,
        final_bloch=final,
        sum_dw=sum_dw,
        sum_dq=sum_dq,
        work=work,
        heat=heat,
        u0=u0,
        u_final=u_final,
        init_index=init_index,
        ptau=ptau_all,
        dpw=dpw_all,
        dpq=dpq_all,
        purity_defect=purity_defect,
    )


def run_transition_study(
    n_traj_per_state: int,
    seed: int,
    scheme: str,
    steps: int,
    protocol: DriveProtocol,
    det: DetectorModel,
    fb: FeedbackParams | None = None,
    chunk_size: int | None = None,
    n_jobs: int = 1,
    record_stride: int | None = None,
    thresholds: StepThresholds = StepThresholds(),
) -> tuple[TransitionDecomposition, dict[int, EnsembleResult]]:
    """Launch equal ensembles from both initial eigenstates.

    Columns get independent seeds (seed and seed+1) so enlarging one column
    never perturbs the other.
    """
    results: dict[int, EnsembleResult] = {}
    for n in (0, 1):
        cfg = EnsembleConfig(
            n_traj=n_traj_per_state,
            seed=seed + n,
            scheme=scheme,
            steps=steps,
            record_stride=record_stride,
            initial_state=InitialState.eigenstate(n),
            thresholds=thresholds,
        )
        results[n] = run_ensemble(
            cfg, protocol, det, fb, chunk_size=chunk_size, n_jobs=n_jobs
        )
    decomp = assemble_transition_decomposition(
        results[0].columns[0], results[1].columns[1]
    )
    return decomp, results


def lindblad_reference(
    init: DensityMatrix,
    protocol: DriveProtocol,
    det: DetectorModel,
    steps: int,
) -> list[DensityMatrix]:
    """Deterministic ensemble-mean evolution on the integration grid.

    Unitary flow plus transverse coherence decay at rate dI^2/(4 S0),
    integrated with the classical fourth-order scheme so it is a sharper
    reference than the stochastic integrators it validates.
    """
    g4 = det.dephasing_rate
    dt = protocol.tau / steps
    eps = protocol.epsilon
    hbar = protocol.hbar

    def lam(t: float) -> float:
        return protocol.g / math.cosh(protocol.nu * (1.0 - t / protocol.tau))

    # cross product with omega = (wx, 0, wz): (-wz*y, wz*x - wx*z, wx*y)
    def f(t: float, r: np.ndarray) -> np.ndarray:
        wx, wz = -2.0 * lam(t) / hbar, -2.0 * eps / hbar
        return np.array(
            [
                -wz * r[1] - g4 * r[0],
                wz * r[0] - wx * r[2] - g4 * r[1],
                wx * r[1],
            ]
        )

    r = np.array(bloch_coordinates(init), dtype=float)
    out = [init]
    for k in range(steps):
        t = k * dt
        k1 = f(t, r)
        k2 = f(t + dt / 2.0, r + dt / 2.0 * k1)
        k3 = f(t + dt / 2.0, r + dt / 2.0 * k2)
        k4 = f(t + dt, r + dt * k3)
        r = r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(density_from_bloch(*r))
    return out
