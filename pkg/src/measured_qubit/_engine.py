"""Vectorized trajectory kernel shared by the single-step API, the
single-trajectory integrator and the Monte Carlo ensemble driver.

One integration step splits into two substeps whose increments add up to the
step increment bit-exactly:

  1. a unitary substep: the Bloch vector is rotated exactly about the step's
     effective generator, built from the drive at two Gauss nodes plus the
     fourth-order commutator correction. Rotations preserve trace, purity
     and positivity to rounding error, and conserve the energy along the
     rotation axis exactly. The generator, read back as a Hermitian
     operator, is the step's bookkeeping Hamiltonian.
  2. a measurement substep on the detector terms of the state-update
     equations, either Euler in the Ito form ("ito-euler") or a
     predictor-corrector pass on the Stratonovich-converted drift
     ("stratonovich-heun"). The Ito-to-Stratonovich correction is computed
     from the noise-coefficient vector and its Jacobian.

After the measurement substep the state is projected back onto the physical
set. Projections are folded into the measurement increment so the
work/heat split stays additive; exceedances above ``count_tol`` are counted
as clamp events and exceedances above ``abort_tol`` abort the run.

Per-step bookkeeping contracts the step's effective Hamiltonian with the
two increments, which keeps the per-step energy residual |dU - dW - dQ| at
rounding level for every step, with or without feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qubit import DriveProtocol

__all__ = [
    "IntegrationBlowupError",
    "StepThresholds",
    "StepContext",
    "PathResult",
    "step_arrays",
    "run_paths",
    "unitary_bloch_series",
    "SCHEMES",
]

SCHEMES = ("ito-euler", "stratonovich-heun")

# Gauss-Legendre nodes on [0, 1] for the fourth-order generator
_GAUSS_LO = 0.5 - math.sqrt(3.0) / 6.0
_GAUSS_HI = 0.5 + math.sqrt(3.0) / 6.0
_COMM_COEF = math.sqrt(3.0) / 12.0


class IntegrationBlowupError(RuntimeError):
    """State left the physical set beyond the abort tolerance."""

    def __init__(self, step: int, trajectory: int, violation: float, clamp_events: int):
        self.step = step
        self.trajectory = trajectory
        self.violation = violation
        self.clamp_events = clamp_events
        super().__init__(
            f"integration blowup at step {step}, trajectory {trajectory}: "
            f"positivity violated by {violation:.3e} "
            f"({clamp_events} clamp events so far)"
        )


@dataclass(frozen=True)
class StepThresholds:
    """Physicality projection policy.

    Any positive exceedance of |rho12|^2 over rho11*(1 - rho11), or
    excursion of rho11 outside [0, 1], is projected away. Exceedances above
    ``count_tol`` are counted as clamp events; above ``abort_tol`` the run
    aborts. The defaults leave the schemes' own noise floor uncounted while
    still catching genuine instability.
    """

    count_tol: float = 1e-7
    abort_tol: float = 5e-2


@dataclass(frozen=True)
class StepContext:
    """Immutable physics parameters of a run."""

    g: float
    nu: float
    tau: float
    epsilon: float
    hbar: float
    delta_i: float
    s0: float
    i0: float
    scheme: str
    thresholds: StepThresholds = StepThresholds()

    @staticmethod
    def build(protocol: DriveProtocol, delta_i: float, s0: float, i0: float,
              scheme: str, thresholds: StepThresholds = StepThresholds()) -> "StepContext":
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if delta_i != 0.0 and s0 <= 0.0:
            raise ValueError("s0 must be positive when delta_i is nonzero")
        return StepContext(
            g=protocol.g, nu=protocol.nu, tau=protocol.tau,
            epsilon=protocol.epsilon, hbar=protocol.hbar,
            delta_i=delta_i, s0=s0, i0=i0, scheme=scheme, thresholds=thresholds,
        )

    @property
    def k0(self) -> float:
        return self.delta_i / self.s0 if self.delta_i != 0.0 else 0.0

    @property
    def g4(self) -> float:
        return self.delta_i**2 / (4.0 * self.s0) if self.delta_i != 0.0 else 0.0


def _rotate(x, y, z, phx, phy, phz):
    """Rodrigues rotation of (x, y, z) by the angle vector (phx, phy, phz)."""
    th = np.sqrt(phx * phx + phy * phy + phz * phz)
    safe = np.where(th > 0.0, th, 1.0)
    nx, ny, nz = phx / safe, phy / safe, phz / safe
    c = np.cos(th)
    s = np.sin(th)
    dot = nx * x + ny * y + nz * z
    k = (1.0 - c) * dot
    xr = x * c + (ny * z - nz * y) * s + nx * k
    yr = y * c + (nz * x - nx * z) * s + ny * k
    zr = z * c + (nx * y - ny * x) * s + nz * k
    zero = th == 0.0
    if np.any(zero):
        xr = np.where(zero, x, xr)
        yr = np.where(zero, y, yr)
        zr = np.where(zero, z, zr)
    return xr, yr, zr


def _stratonovich_drift(p, u, v, k0, g4, s0):
    """Ito measurement drift minus (sigma^2/2) (b . grad) b, sigma^2 = s0/2."""
    pq = p * (1.0 - p)
    om = 1.0 - 2.0 * p
    corr = s0 / 4.0
    fac = k0 * k0 * (om * om - 4.0 * pq)
    return (
        -corr * 4.0 * k0 * k0 * pq * om,
        -g4 * u - corr * fac * u,
        -g4 * v - corr * fac * v,
    )


def _noise_coeffs(p, u, v, k0):
    pq = p * (1.0 - p)
    om = 1.0 - 2.0 * p
    return 2.0 * k0 * pq, k0 * om * u, k0 * om * v


def _wrap_angle(a):
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def step_arrays(ctx: StepContext, t0: float, dt: float, x, y, z, xi, gain):
    """Advance a batch one step from absolute time t0.

    Returns a dict with the rotated intermediate, both increments, the new
    state, the effective Hamiltonian coefficients and the physicality
    diagnostics. ``gain`` is a scalar or per-trajectory array.
    """
    n = x.shape[0]
    eps, hbar = ctx.epsilon, ctx.hbar
    lam1 = gain / np.cosh(ctx.nu * (1.0 - (t0 + _GAUSS_LO * dt) / ctx.tau))
    lam2 = gain / np.cosh(ctx.nu * (1.0 - (t0 + _GAUSS_HI * dt) / ctx.tau))
    phx = -dt * (lam1 + lam2) / hbar
    phy = _COMM_COEF * (dt * dt) * 4.0 * eps * (lam1 - lam2) / (hbar * hbar)
    phz = -2.0 * dt * eps / hbar
    phx = np.broadcast_to(np.asarray(phx, dtype=float), (n,))
    phy = np.broadcast_to(np.asarray(phy, dtype=float), (n,))
    phz = np.broadcast_to(np.asarray(phz, dtype=float), (n,)).copy()

    xr, yr, zr = _rotate(x, y, z, phx, phy, phz)
    dwx, dwy, dwz = xr - x, yr - y, zr - z

    # effective Hamiltonian of the step: H_eff = -hbar * phi / (2 dt)
    scale = hbar / (2.0 * dt)
    cx_now = -phx * scale
    cy_now = -phy * scale
    cz_now = -phz * scale

    viol_max = 0.0
    clamp_count = 0
    abort_idx = -1
    if ctx.delta_i != 0.0:
        k0, g4, s0 = ctx.k0, ctx.g4, ctx.s0
        p = (1.0 + zr) / 2.0
        u = xr / 2.0
        v = yr / 2.0
        if ctx.scheme == "ito-euler":
            cp, cu, cv = _noise_coeffs(p, u, v, k0)
            p_n = p + cp * xi * dt
            u_n = u + (-g4 * u + cu * xi) * dt
            v_n = v + (-g4 * v + cv * xi) * dt
        else:
            ap, au, av = _stratonovich_drift(p, u, v, k0, g4, s0)
            cp, cu, cv = _noise_coeffs(p, u, v, k0)
            f1p, f1u, f1v = ap + cp * xi, au + cu * xi, av + cv * xi
            pp = p + f1p * dt
            up = u + f1u * dt
            vp = v + f1v * dt
            ap2, au2, av2 = _stratonovich_drift(pp, up, vp, k0, g4, s0)
            cp2, cu2, cv2 = _noise_coeffs(pp, up, vp, k0)
            p_n = p + 0.5 * dt * (f1p + ap2 + cp2 * xi)
            u_n = u + 0.5 * dt * (f1u + au2 + cu2 * xi)
            v_n = v + 0.5 * dt * (f1v + av2 + cv2 * xi)

        viol_p = np.maximum(-p_n, p_n - 1.0)
        p_c = np.clip(p_n, 0.0, 1.0)
        lim = p_c * (1.0 - p_c)
        m2 = u_n * u_n + v_n * v_n
        viol = np.maximum(viol_p, m2 - lim)
        viol_max = float(viol.max())
        if viol_max > ctx.thresholds.abort_tol:
            abort_idx = int(np.argmax(viol))
        clamp_count = int(np.count_nonzero(viol > ctx.thresholds.count_tol))
        over = m2 > lim
        if np.any(over):
            denom = np.where(m2 > 0.0, m2, 1.0)
            sc = np.where(over, np.sqrt(np.maximum(lim, 0.0) / denom), 1.0)
            u_c = u_n * sc
            v_c = v_n * sc
        else:
            u_c, v_c = u_n, v_n
        dqx = 2.0 * u_c - xr
        dqy = 2.0 * v_c - yr
        dqz = (2.0 * p_c - 1.0) - zr
    else:
        dqx = dqy = dqz = np.zeros(n)

    return {
        "dw": (dwx, dwy, dwz),
        "dq": (dqx, dqy, dqz),
        "new": (x + dwx + dqx, y + dwy + dqy, z + dwz + dqz),
        "c_now": (cx_now, cy_now, cz_now),
        "viol_max": viol_max,
        "clamp_count": clamp_count,
        "abort_idx": abort_idx,
    }


@dataclass
class PathResult:
    """Raw batch output in Bloch coordinates (x, y, z) = (2u, 2v, 2p-1)."""

    final: np.ndarray            # (n, 3)
    sum_dw: np.ndarray           # (n, 3) summed unitary increments
    sum_dq: np.ndarray           # (n, 3) summed measurement increments
    work: np.ndarray             # (n,)
    heat: np.ndarray             # (n,)
    u0: np.ndarray               # (n,)
    u_final: np.ndarray          # (n,)
    max_residual: float
    max_violation: float
    clamp_events: int
    steps: int
    dt: float
    record_times: np.ndarray | None = None      # (kept,)
    record_states: np.ndarray | None = None     # (kept, n, 3)
    record_currents: np.ndarray | None = None   # (steps, n)
    record_dw: np.ndarray | None = None         # (steps, n, 3)
    record_dq: np.ndarray | None = None         # (steps, n, 3)
    record_work: np.ndarray | None = None       # (steps, n)
    record_heat: np.ndarray | None = None       # (steps, n)
    record_du: np.ndarray | None = None         # (steps, n)
    h_nodes: np.ndarray | None = None           # (steps, n, 3) effective (cx, cy, cz)
    gains: np.ndarray | None = None             # (steps, n)


def run_paths(
    init_bloch: np.ndarray,
    ctx: StepContext,
    noise: np.ndarray,
    feedback_strength: float | None = None,
    reference: np.ndarray | None = None,
    record_stride: int | None = None,
    record_steps: bool = False,
    trajectory_offset: int = 0,
) -> PathResult:
    """Integrate a batch of trajectories sharing one initial state.

    Parameters
    ----------
    init_bloch : (3,) Bloch vector shared by the batch.
    noise : (steps, n) detector noise samples.
    feedback_strength : gain-control strength f, or None for open loop.
    reference : (steps+1, 3) target Bloch series, required with feedback.
    record_stride : keep state snapshots every this many steps.
    record_steps : keep per-step series (currents, increments, work, heat,
        energy, effective Hamiltonians, gains); meant for single
        trajectories or small batches.
    trajectory_offset : global index of the first trajectory, used in abort
        diagnostics.
    """
    steps, n = noise.shape
    dt = ctx.tau / steps
    if feedback_strength is not None:
        if reference is None:
            raise ValueError("feedback requires a reference trajectory")
        if reference.shape[0] != steps + 1:
            raise ValueError("reference grid does not match the step count")

    x = np.full(n, float(init_bloch[0]))
    y = np.full(n, float(init_bloch[1]))
    z = np.full(n, float(init_bloch[2]))

    sum_dw = np.zeros((n, 3))
    sum_dq = np.zeros((n, 3))
    work = np.zeros(n)
    heat = np.zeros(n)

    # bookkeeping Hamiltonian at the initial grid point: nominal H(0)
    cx_prev = np.full(n, ctx.g / math.cosh(ctx.nu))
    cy_prev = np.zeros(n)
    cz_prev = np.full(n, ctx.epsilon)
    u_prev = cx_prev * x + cy_prev * y + cz_prev * z
    u0 = u_prev.copy()

    max_residual = 0.0
    max_violation = 0.0
    clamp_events = 0

    keep_stride = record_stride is not None
    if keep_stride:
        if record_stride <= 0 or steps % record_stride != 0:
            raise ValueError("record_stride must be positive and divide steps")
        kept = steps // record_stride + 1
        rec_t = np.empty(kept)
        rec_s = np.empty((kept, n, 3))
        rec_t[0] = 0.0
        rec_s[0] = np.stack([x, y, z], axis=-1)
        ki = 1
    if record_steps:
        st_cur = np.empty((steps, n))
        st_dw = np.empty((steps, n, 3))
        st_dq = np.empty((steps, n, 3))
        st_w = np.empty((steps, n))
        st_q = np.empty((steps, n))
        st_du = np.empty((steps, n))
        st_h = np.empty((steps, n, 3))
        st_gain = np.empty((steps, n))

    for k in range(steps):
        t0 = k * dt
        xi = noise[k]

        if feedback_strength is not None:
            yd, zd = reference[k, 1], reference[k, 2]
            if math.hypot(yd, zd) < 1e-12:
                dphi = np.zeros(n)
            else:
                # arctan2 for both operands: a trajectory that tracks the
                # reference bit-exactly must see a phase error of exactly 0
                dphi = np.where(
                    np.hypot(y, z) < 1e-12,
                    0.0,
                    _wrap_angle(np.arctan2(y, z) - np.arctan2(yd, zd)),
                )
            gain = (1.0 - feedback_strength * dphi) * ctx.g
        else:
            gain = ctx.g

        out = step_arrays(ctx, t0, dt, x, y, z, xi, gain)
        if out["abort_idx"] >= 0:
            raise IntegrationBlowupError(
                k, trajectory_offset + out["abort_idx"], out["viol_max"], clamp_events
            )
        clamp_events += out["clamp_count"]
        if out["viol_max"] > max_violation:
            max_violation = out["viol_max"]

        dwx, dwy, dwz = out["dw"]
        dqx, dqy, dqz = out["dq"]
        cx_now, cy_now, cz_now = out["c_now"]
        x_new, y_new, z_new = out["new"]

        dW = (cx_now - cx_prev) * x + (cy_now - cy_prev) * y + (cz_now - cz_prev) * z
        dQ = cx_now * dqx + cy_now * dqy + cz_now * dqz
        u_now = cx_now * x_new + cy_now * y_new + cz_now * z_new
        resid = float(np.abs(u_now - u_prev - dW - dQ).max())
        if resid > max_residual:
            max_residual = resid

        sum_dw[:, 0] += dwx
        sum_dw[:, 1] += dwy
        sum_dw[:, 2] += dwz
        sum_dq[:, 0] += dqx
        sum_dq[:, 1] += dqy
        sum_dq[:, 2] += dqz
        work += dW
        heat += dQ

        if record_steps:
            st_cur[k] = ctx.i0 + 0.5 * ctx.delta_i * z + xi
            st_dw[k] = np.stack([dwx, dwy, dwz], axis=-1)
            st_dq[k] = np.stack([dqx, dqy, dqz], axis=-1)
            st_w[k] = dW
            st_q[k] = dQ
            st_du[k] = u_now - u_prev
            st_h[k] = np.stack(
                [cx_now, np.broadcast_to(cy_now, (n,)), np.broadcast_to(cz_now, (n,))],
                axis=-1,
            )
            st_gain[k] = gain

        x, y, z = x_new, y_new, z_new
        u_prev = u_now
        cx_prev, cy_prev, cz_prev = cx_now, cy_now, cz_now

        if keep_stride and (k + 1) % record_stride == 0:
            rec_t[ki] = (k + 1) * dt
            rec_s[ki] = np.stack([x, y, z], axis=-1)
            ki += 1

    out = PathResult(
        final=np.stack([x, y, z], axis=-1),
        sum_dw=sum_dw,
        sum_dq=sum_dq,
        work=work,
        heat=heat,
        u0=u0,
        u_final=u_prev,
        max_residual=max_residual,
        max_violation=max_violation,
        clamp_events=clamp_events,
        steps=steps,
        dt=dt,
    )
    if keep_stride:
        out.record_times = rec_t
        out.record_states = rec_s
    if record_steps:
        out.record_currents = st_cur
        out.record_dw = st_dw
        out.record_dq = st_dq
        out.record_work = st_w
        out.record_heat = st_q
        out.record_du = st_du
        out.h_nodes = st_h
        out.gains = st_gain
    return out


def unitary_bloch_series(
    init_bloch: np.ndarray, protocol: DriveProtocol, steps: int
) -> np.ndarray:
    """Backaction-free Bloch series on the integration grid, (steps+1, 3)."""
    ctx = StepContext.build(protocol, 0.0, 0.0, 0.0, "stratonovich-heun")
    dt = protocol.tau / steps
    r = np.asarray(init_bloch, dtype=float)
    x = np.array([r[0]])
    y = np.array([r[1]])
    z = np.array([r[2]])
    out = np.empty((steps + 1, 3))
    out[0] = r
    zero = np.zeros(1)
    for k in range(steps):
        res = step_arrays(ctx, k * dt, dt, x, y, z, zero, ctx.g)
        x, y, z = res["new"]
        out[k + 1] = (x[0], y[0], z[0])
    return out
