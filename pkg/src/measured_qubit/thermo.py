"""Thermodynamic bookkeeping along quantum trajectories.

Per step, with the bookkeeping Hamiltonians H_prev and H_now at the two
grid points and the unitary/measurement split (d_rho_w, d_rho_q):

    work  dW = tr(rho_prev (H_now - H_prev))
    heat  dQ = tr(H_now d_rho_q)
    energy U_k = tr(H_k rho_k)

so dU - dW - dQ = tr(H_now d_rho_w), which vanishes because the unitary
increment is a rotation generated by H_now itself. Summed over a run these
definitions give the trajectory work/heat ledger; contracted against the
final-basis projectors they give the work/heat split of the transition
probabilities. The split of P_tau - identity assigns the measurement
increments to the heat part and everything unitary, including the
basis mismatch between the initial and final eigenbases, to the work part,
so the per-trajectory additivity identity is exact by construction and the
heat column vanishes identically for a decoupled detector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qubit import (
    DensityMatrix,
    QubitOperator,
    SpectralDecomposition,
    expectation,
)
from .sme import StateDelta, StepDecomposition, TrajectoryRecord

__all__ = [
    "ThermoLedger",
    "TransitionColumn",
    "TransitionDecomposition",
    "DiscreteDistribution",
    "FirstLawError",
    "step_work",
    "step_heat",
    "ledger_update",
    "new_ledger",
    "transition_decomposition",
    "assemble_transition_decomposition",
    "tpm_distribution",
    "jarzynski_estimate",
]

RESIDUAL_TOL = 1e-10
ATOM_MERGE_TOL = 1e-9


class FirstLawError(RuntimeError):
    """A step's energy balance failed beyond tolerance: decomposition bug."""


@dataclass(frozen=True)
class ThermoLedger:
    """Cumulative work, heat and internal energy of one trajectory."""

    w_cum: float
    q_cum: float
    u0: float
    u_now: float
    max_residual: float = 0.0

    def first_law_gap(self) -> float:
        return abs(self.u_now - self.u0 - self.w_cum - self.q_cum)


def new_ledger(rho0: DensityMatrix, h0: QubitOperator) -> ThermoLedger:
    u = expectation(rho0, h0)
    return ThermoLedger(0.0, 0.0, u, u)


def step_work(
    rho_prev: DensityMatrix, h_prev: QubitOperator, h_now: QubitOperator
) -> float:
    """tr(rho_prev (h_now - h_prev)): work done by moving the Hamiltonian."""
    return expectation(rho_prev, h_now - h_prev)


def _contract(h: QubitOperator, delta: StateDelta) -> float:
    dx, dy, dz = delta.bloch()
    return h.cx * dx + h.cy * dy + h.cz * dz


def step_heat(d_rho_q: StateDelta, h_now: QubitOperator) -> float:
    """tr(h_now d_rho_q): energy exchanged through the detector terms."""
    return _contract(h_now, d_rho_q)


def ledger_update(
    ledger: ThermoLedger,
    rho_prev: DensityMatrix,
    rho_now: DensityMatrix,
    h_prev: QubitOperator,
    h_now: QubitOperator,
    decomposition: StepDecomposition,
) -> ThermoLedger:
    """Advance the ledger by one step and check the energy balance."""
    dw = step_work(rho_prev, h_prev, h_now)
    dq = step_heat(decomposition.d_rho_q, h_now)
    u_now = expectation(rho_now, h_now)
    residual = abs(u_now - ledger.u_now - dw - dq)
    if residual > RESIDUAL_TOL:
        raise FirstLawError(
            f"per-step energy residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}"
        )
    return ThermoLedger(
        w_cum=ledger.w_cum + dw,
        q_cum=ledger.q_cum + dq,
        u0=ledger.u0,
        u_now=u_now,
        max_residual=max(ledger.max_residual, residual),
    )


@dataclass(frozen=True)
class TransitionColumn:
    """Per-initial-eigenstate transition statistics (index order: -, +)."""

    n: int
    p_tau: np.ndarray        # (2,) mean transition probabilities
    dp_w: np.ndarray         # (2,) mean work contributions
    dp_q: np.ndarray         # (2,) mean heat contributions
    se_p_tau: np.ndarray
    se_dp_w: np.ndarray
    se_dp_q: np.ndarray
    n_traj: int


@dataclass(frozen=True)
class TransitionDecomposition:
    """Transition probabilities with their work/heat split, both columns.

    Matrices are indexed [m, n] with 0 the lower and 1 the upper eigenstate
    of the respective basis. p0 is the identity: every trajectory of column
    n starts in eigenstate n.
    """

    p_tau: np.ndarray
    dp_w: np.ndarray
    dp_q: np.ndarray
    p0: np.ndarray
    se_p_tau: np.ndarray
    se_dp_w: np.ndarray
    se_dp_q: np.ndarray
    n_traj: np.ndarray       # (2,) ensemble size per column

    def validate(self, tol: float = 1e-10) -> None:
        """Machine-check the structural invariants; raise on violation."""
        col_sums = self.p_tau.sum(axis=0)
        if np.abs(col_sums - 1.0).max() > tol:
            raise ValueError(f"p_tau columns must sum to 1, got {col_sums}")
        if self.p_tau.min() < -tol or self.p_tau.max() > 1 + tol:
            raise ValueError("p_tau entries outside [0, 1]")
        add = self.p_tau - self.p0 - self.dp_w - self.dp_q
        if np.abs(add).max() > tol:
            raise ValueError(
                f"additivity violated by {np.abs(add).max():.3e}"
            )
        for name, m in (("dp_w", self.dp_w), ("dp_q", self.dp_q)):
            s = m.sum(axis=0)
            if np.abs(s).max() > tol:
                raise ValueError(f"{name} columns must sum to 0, got {s}")


def _projector_series(basis: SpectralDecomposition) -> tuple[QubitOperator, QubitOperator]:
    return basis.proj_minus, basis.proj_plus


def per_trajectory_transitions(
    record: TrajectoryRecord,
    basis_tau: SpectralDecomposition,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(p_tau, dp_w, dp_q) of one trajectory in the final basis, shape (2,).

    The work part carries the projection of the initial state onto the
    final basis minus the initial transition probabilities, so that
    p_tau - p0 = dp_w + dp_q holds exactly; the heat part is the projected
    sum of the measurement increments alone.
    """
    projs = _projector_series(basis_tau)
    rho0 = record.initial_state()
    rho_tau = record.final_state()
    sum_w = np.zeros(3)
    sum_q = np.zeros(3)
    for d in record.decompositions:
        sum_w += d.d_rho_w.bloch()
        sum_q += d.d_rho_q.bloch()

    # identify which final-basis index the initial state projects to most;
    # p0 entries are 0/1 because columns are launched from eigenstates
    p_tau = np.array([expectation(rho_tau, pr) for pr in projs])
    base = np.array([expectation(rho0, pr) for pr in projs])
    dp_q = np.array(
        [pr.cx * sum_q[0] + pr.cy * sum_q[1] + pr.cz * sum_q[2] for pr in projs]
    )
    dp_w_dyn = np.array(
        [pr.cx * sum_w[0] + pr.cy * sum_w[1] + pr.cz * sum_w[2] for pr in projs]
    )
    return p_tau, base + dp_w_dyn, dp_q


def transition_decomposition(
    n: int,
    records: Sequence[TrajectoryRecord],
    basis_0: SpectralDecomposition,
    basis_tau: SpectralDecomposition,
) -> TransitionColumn:
    """Average the per-trajectory transition split over an ensemble.

    Every record must start in eigenstate n of basis_0; dp_w entries are
    reported relative to the initial transition probabilities (identity
    column), so p_tau - delta = dp_w + dp_q per trajectory and on average.
    """
    if n not in (0, 1):
        raise ValueError("initial eigenstate index must be 0 or 1")
    proj_n = (basis_0.proj_minus, basis_0.proj_plus)[n]
    nt = len(records)
    if nt == 0:
        raise ValueError("empty ensemble")
    ptau = np.empty((nt, 2))
    dpw = np.empty((nt, 2))
    dpq = np.empty((nt, 2))
    delta = np.array([1.0 - n, float(n)])
    for i, rec in enumerate(records):
        rho0 = rec.initial_state()
        if abs(expectation(rho0, proj_n) - 1.0) > 1e-9:
            raise ValueError(
                f"record {i} does not start in eigenstate {n} of the initial basis"
            )
        p, w_tot, q = per_trajectory_transitions(rec, basis_tau)
        ptau[i] = p
        dpw[i] = w_tot - delta
        dpq[i] = q
    sq = max(nt - 1, 1)

    def se(a):
        return a.std(axis=0, ddof=1) / np.sqrt(nt) if nt > 1 else np.zeros(2)

    return TransitionColumn(
        n=n,
        p_tau=ptau.mean(axis=0),
        dp_w=dpw.mean(axis=0),
        dp_q=dpq.mean(axis=0),
        se_p_tau=se(ptau),
        se_dp_w=se(dpw),
        se_dp_q=se(dpq),
        n_traj=nt,
    )


def assemble_transition_decomposition(
    col_minus: TransitionColumn, col_plus: TransitionColumn
) -> TransitionDecomposition:
    if (col_minus.n, col_plus.n) != (0, 1):
        raise ValueError("expected columns for eigenstates 0 and 1")
    stack = lambda a, b: np.stack([a, b], axis=1)
    return TransitionDecomposition(
        p_tau=stack(col_minus.p_tau, col_plus.p_tau),
        dp_w=stack(col_minus.dp_w, col_plus.dp_w),
        dp_q=stack(col_minus.dp_q, col_plus.dp_q),
        p0=np.eye(2),
        se_p_tau=stack(col_minus.se_p_tau, col_plus.se_p_tau),
        se_dp_w=stack(col_minus.se_dp_w, col_plus.se_dp_w),
        se_dp_q=stack(col_minus.se_dp_q, col_plus.se_dp_q),
        n_traj=np.array([col_minus.n_traj, col_plus.n_traj]),
    )


@dataclass(frozen=True)
class DiscreteDistribution:
    """Atomic energy-change distribution from two-point statistics."""

    support: np.ndarray
    probabilities: np.ndarray
    variances: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = self.probabilities
        if np.any(p < -1e-12):
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")


def tpm_distribution(
    p0_populations: np.ndarray,
    p_tau: np.ndarray,
    basis_0: SpectralDecomposition,
    basis_tau: SpectralDecomposition,
    p_tau_se: np.ndarray | None = None,
) -> DiscreteDistribution:
    """Two-point energy-change distribution.

    Atoms sit at E_tau[m] - E_0[n] with weights p_tau[m, n] * p0[n];
    coincident atoms (within 1e-9) are merged. Per-atom variances, when
    standard errors of p_tau are supplied, are propagated treating entries
    as independent, which is conservative for merged atoms.
    """
    p0 = np.asarray(p0_populations, dtype=float)
    p_tau = np.asarray(p_tau, dtype=float)
    if p0.shape != (2,) or abs(p0.sum() - 1.0) > 1e-12 or np.any(p0 < 0):
        raise ValueError("p0_populations must be two nonnegative weights summing to 1")
    if np.abs(p_tau.sum(axis=0) - 1.0).max() > 1e-10:
        raise ValueError("p_tau must be column-stochastic")
    e0 = np.array([basis_0.e_minus, basis_0.e_plus])
    et = np.array([basis_tau.e_minus, basis_tau.e_plus])
    atoms: list[tuple[float, float, float]] = []
    for m in range(2):
        for n in range(2):
            w = p_tau[m, n] * p0[n]
            var = 0.0
            if p_tau_se is not None:
                var = (p_tau_se[m, n] * p0[n]) ** 2
            atoms.append((et[m] - e0[n], w, var))
    atoms.sort(key=lambda a: a[0])
    support: list[float] = []
    probs: list[float] = []
    variances: list[float] = []
    for e, w, var in atoms:
        if support and abs(e - support[-1]) <= ATOM_MERGE_TOL:
            probs[-1] += w
            variances[-1] += var
        else:
            support.append(e)
            probs.append(w)
            variances.append(var)
    return DiscreteDistribution(
        support=np.array(support),
        probabilities=np.array(probs),
        variances=np.array(variances) if p_tau_se is not None else None,
    )


def jarzynski_estimate(dist: DiscreteDistribution, beta: float) -> tuple[float, float]:
    """Free-energy estimate -ln(sum p exp(-beta u))/beta and its standard
    error propagated from the atom-weight variances (0 when absent)."""
    if beta <= 0:
        raise ValueError("jarzynski estimation requires beta > 0")
    weights = np.exp(-beta * dist.support)
    s = float(np.dot(dist.probabilities, weights))
    if s <= 0.0:
        raise ValueError("estimator sum is nonpositive")
    est = -np.log(s) / beta
    if dist.variances is None:
        return est, 0.0
    var_s = float(np.dot(dist.variances, weights**2))
    return est, np.sqrt(var_s) / (beta * s)
