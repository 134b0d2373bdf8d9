"""Experiment orchestration: presets to files.

Every run writes a ``resolved.config`` (the flat config that reproduces it
bit-identically), the preset's delimited data files with the resolved
config embedded, and, unless disabled, rendered figures.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_dict, dump_config
from .ensemble import run_transition_study
from .feedback import FeedbackParams, make_controller
from .presets import JARZYNSKI_DURATIONS, PAPER_REFERENCE
from .qubit import (
    DensityMatrix,
    DriveProtocol,
    ThermalSpec,
    eigendecompose,
    expectation,
    free_energy_difference,
    hamiltonian_at,
    thermal_state,
)
from .sme import INIT_STREAM_ID, DetectorModel, NoiseProcess, _philox, integrate_trajectory
from .thermo import TransitionDecomposition, jarzynski_estimate, tpm_distribution
from ._engine import unitary_bloch_series

__all__ = ["run_experiment", "build_protocol", "build_detector"]


def build_protocol(cfg: ExperimentConfig, tau_steps: int | None = None) -> DriveProtocol:
    steps = tau_steps if tau_steps is not None else cfg.tau_steps
    return DriveProtocol(
        g=cfg.g, nu=cfg.nu, tau=steps * cfg.dt, epsilon=cfg.epsilon
    )


def build_detector(cfg: ExperimentConfig) -> DetectorModel:
    return DetectorModel(delta_i=cfg.delta_i, s0=cfg.s0, i0=cfg.i0)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(path: Path, cfg: ExperimentConfig, header: list[str], rows) -> None:
    lines = [f"# {k} = {v}" for k, v in config_dict(cfg).items()]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(x) if isinstance(x, float) else str(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_json(path: Path, cfg: ExperimentConfig, body: dict) -> None:
    payload = {"config": config_dict(cfg), "seed": cfg.seed}
    payload.update(body)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _decomp_json(d: TransitionDecomposition) -> dict:
    return {
        "p0": d.p0.tolist(),
        "p_tau": d.p_tau.tolist(),
        "dp_w": d.dp_w.tolist(),
        "dp_q": d.dp_q.tolist(),
        "se_p_tau": d.se_p_tau.tolist(),
        "se_dp_w": d.se_dp_w.tolist(),
        "se_dp_q": d.se_dp_q.tolist(),
        "n_traj": d.n_traj.tolist(),
    }


def _feedback_params(cfg: ExperimentConfig) -> FeedbackParams | None:
    if not cfg.feedback_enabled:
        return None
    return FeedbackParams(f=cfg.feedback_f, enabled=True)


def _unitary_p_tau(cfg: ExperimentConfig, tau_steps: int) -> np.ndarray:
    """Transition matrix of the isolated evolution on a refined grid."""
    protocol = build_protocol(cfg, tau_steps)
    basis0 = eigendecompose(hamiltonian_at(0.0, protocol))
    basis_tau = eigendecompose(hamiltonian_at(protocol.tau, protocol))
    cols = []
    for proj in (basis0.proj_minus, basis0.proj_plus):
        r0 = np.array([2 * proj.cx, 2 * proj.cy, 2 * proj.cz])
        r = unitary_bloch_series(r0, protocol, tau_steps * 4)[-1]
        cols.append(
            [
                pr.c0 + pr.cx * r[0] + pr.cy * r[1] + pr.cz * r[2]
                for pr in (basis_tau.proj_minus, basis_tau.proj_plus)
            ]
        )
    return np.array(cols).T  # [m, n]


def _thermal_populations(cfg: ExperimentConfig, protocol: DriveProtocol) -> np.ndarray:
    h0 = hamiltonian_at(0.0, protocol)
    rho = thermal_state(ThermalSpec(cfg.beta), h0)
    basis0 = eigendecompose(h0)
    return np.array(
        [expectation(rho, basis0.proj_minus), expectation(rho, basis0.proj_plus)]
    )


def _run_fig1(cfg: ExperimentConfig, out: Path, plots: bool) -> list[Path]:
    protocol = build_protocol(cfg)
    det = build_detector(cfg)
    basis0 = eigendecompose(hamiltonian_at(0.0, protocol))
    pops = _thermal_populations(cfg, protocol)
    # same mixture-sampling stream as ensembles; this is trajectory 0
    u = float(_philox(cfg.seed, INIT_STREAM_ID).random(1)[0])
    proj = basis0.proj_minus if u < pops[0] else basis0.proj_plus
    init = DensityMatrix(proj.c0 + proj.cz, complex(proj.cx, proj.cy))
    controller = None
    fb = _feedback_params(cfg)
    if fb is not None:
        controller = make_controller(fb, init, protocol, cfg.tau_steps)
    noise = NoiseProcess.for_run(cfg.seed, 0, cfg.s0, cfg.dt)
    rec = integrate_trajectory(
        init, protocol, det, noise, cfg.scheme, cfg.tau_steps, controller=controller
    )
    dW = np.empty(cfg.tau_steps)
    dQ = np.empty(cfg.tau_steps)
    dU = np.empty(cfg.tau_steps)
    w_cum = q_cum = 0.0
    rows = []
    z0 = 2 * rec.states[0].rho11 - 1
    rows.append(
        (0, 0.0, rec.states[0].rho11, rec.states[0].rho12.real,
         rec.states[0].rho12.imag, 0.0, det.i0 + 0.5 * det.delta_i * z0,
         0.0, 0.0, 0.0, 0.0, 0.0)
    )
    from .thermo import step_heat, step_work

    h_prev = hamiltonian_at(0.0, protocol)
    for k in range(cfg.tau_steps):
        h_now = rec.h_nodes[k]
        dW[k] = step_work(rec.states[k], h_prev, h_now)
        dQ[k] = step_heat(rec.decompositions[k].d_rho_q, h_now)
        dU[k] = expectation(rec.states[k + 1], h_now) - expectation(rec.states[k], h_prev)
        w_cum += dW[k]
        q_cum += dQ[k]
        s = rec.states[k + 1]
        rows.append(
            (k + 1, rec.times[k + 1], s.rho11, s.rho12.real, s.rho12.imag,
             rec.xis[k], rec.currents[k], dW[k], dQ[k], dU[k], w_cum, q_cum)
        )
        h_prev = h_now
    csv_path = out / "trajectory.csv"
    _write_csv(
        csv_path, cfg,
        ["step", "t", "rho11", "re_rho12", "im_rho12", "xi", "current",
         "dW", "dQ", "dU", "W_cum", "Q_cum"],
        rows,
    )
    written = [csv_path]
    if plots:
        from . import plots as mpl

        fig_path = out / "fig1.png"
        mpl.render_trajectory(rec.times, dW, dQ, dU, rec.currents, fig_path)
        written.append(fig_path)
    return written


def _transition_csv_rows(tag: str, d: TransitionDecomposition):
    for m in range(2):
        for n in range(2):
            yield (
                tag, m, n, d.p0[m, n], d.p_tau[m, n], d.se_p_tau[m, n],
                d.dp_w[m, n], d.se_dp_w[m, n], d.dp_q[m, n], d.se_dp_q[m, n],
            )


def _run_fig2(cfg: ExperimentConfig, out: Path, plots: bool, n_jobs: int) -> list[Path]:
    protocol = build_protocol(cfg)
    det = build_detector(cfg)
    decomp, _ = run_transition_study(
        cfg.n_traj, cfg.seed, cfg.scheme, cfg.tau_steps, protocol, det,
        fb=_feedback_params(cfg), n_jobs=n_jobs,
    )
    decomp.validate()
    json_path = out / "transition.json"
    _write_json(json_path, cfg, {"decomposition": _decomp_json(decomp)})
    csv_path = out / "transition.csv"
    _write_csv(
        csv_path, cfg,
        ["run", "m", "n", "p0", "p_tau", "se_p_tau", "dp_w", "se_dp_w",
         "dp_q", "se_dp_q"],
        _transition_csv_rows("monitored", decomp),
    )
    written = [json_path, csv_path]
    if plots:
        from . import plots as mpl

        fig_path = out / "fig2.png"
        mpl.render_transition_bars(decomp, fig_path)
        written.append(fig_path)
    return written


def _run_fig3(cfg: ExperimentConfig, out: Path, plots: bool, n_jobs: int) -> list[Path]:
    protocol = build_protocol(cfg)
    det = build_detector(cfg)
    fb = FeedbackParams(f=cfg.feedback_f, enabled=True)
    closed, _ = run_transition_study(
        cfg.n_traj, cfg.seed, cfg.scheme, cfg.tau_steps, protocol, det,
        fb=fb, n_jobs=n_jobs,
    )
    open_loop, _ = run_transition_study(
        cfg.n_traj, cfg.seed, cfg.scheme, cfg.tau_steps, protocol, det,
        fb=None, n_jobs=n_jobs,
    )
    closed.validate()
    open_loop.validate()
    unitary = _unitary_p_tau(cfg, cfg.tau_steps)
    json_path = out / "transition_feedback.json"
    _write_json(
        json_path, cfg,
        {
            "feedback": _decomp_json(closed),
            "no_feedback": _decomp_json(open_loop),
            "unitary_p_tau": unitary.tolist(),
        },
    )
    csv_path = out / "transition_feedback.csv"
    rows = list(_transition_csv_rows("feedback", closed))
    rows += list(_transition_csv_rows("no_feedback", open_loop))
    for m in range(2):
        for n in range(2):
            rows.append(
                ("unitary", m, n, float(m == n), unitary[m, n], 0.0,
                 unitary[m, n] - float(m == n), 0.0, 0.0, 0.0)
            )
    _write_csv(
        csv_path, cfg,
        ["run", "m", "n", "p0", "p_tau", "se_p_tau", "dp_w", "se_dp_w",
         "dp_q", "se_dp_q"],
        rows,
    )
    written = [json_path, csv_path]
    if plots:
        from . import plots as mpl

        fig_path = out / "fig3.png"
        mpl.render_feedback_comparison(unitary, closed, open_loop, fig_path)
        written.append(fig_path)
    return written


def _run_jarzynski(cfg: ExperimentConfig, out: Path, plots: bool, n_jobs: int) -> list[Path]:
    det = build_detector(cfg)
    entries = []
    for tau_steps in JARZYNSKI_DURATIONS:
        protocol = build_protocol(cfg, tau_steps)
        fb = FeedbackParams(f=cfg.feedback_f, enabled=cfg.feedback_enabled)
        decomp, _ = run_transition_study(
            cfg.n_traj, cfg.seed, cfg.scheme, tau_steps, protocol, det,
            fb=fb if cfg.feedback_enabled else None, n_jobs=n_jobs,
        )
        decomp.validate()
        basis0 = eigendecompose(hamiltonian_at(0.0, protocol))
        basis_tau = eigendecompose(hamiltonian_at(protocol.tau, protocol))
        pops = _thermal_populations(cfg, protocol)
        dist = tpm_distribution(pops, decomp.p_tau, basis0, basis_tau, decomp.se_p_tau)
        est, stderr = jarzynski_estimate(dist, cfg.beta)
        entries.append(
            {
                "tau_steps": tau_steps,
                "delta_f_est": est,
                "stderr": stderr,
                "support": dist.support.tolist(),
                "probabilities": dist.probabilities.tolist(),
            }
        )
    protocol = build_protocol(cfg)
    exact = free_energy_difference(
        ThermalSpec(cfg.beta),
        hamiltonian_at(0.0, protocol),
        hamiltonian_at(protocol.tau, protocol),
    )
    json_path = out / "jarzynski.json"
    _write_json(
        json_path, cfg,
        {
            "beta": cfg.beta,
            "estimates": entries,
            "delta_f_exact": exact,
            "paper_reference": PAPER_REFERENCE,
        },
    )
    written = [json_path]
    if plots:
        from . import plots as mpl

        fig_path = out / "jarzynski.png"
        mpl.render_jarzynski(entries, exact, fig_path)
        written.append(fig_path)
    return written


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    plots: bool = True,
    n_jobs: int = 1,
) -> list[Path]:
    """Run the preset selected by cfg.preset and write its outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.config").write_text(dump_config(cfg), encoding="utf-8")
    written = [out / "resolved.config"]
    if cfg.preset == "fig1":
        written += _run_fig1(cfg, out, plots)
    elif cfg.preset == "fig2":
        written += _run_fig2(cfg, out, plots, n_jobs)
    elif cfg.preset in ("fig3a", "fig3b"):
        written += _run_fig3(cfg, out, plots, n_jobs)
    elif cfg.preset == "jarzynski":
        written += _run_jarzynski(cfg, out, plots, n_jobs)
    else:  # pragma: no cover - guarded by config validation
        raise ValueError(f"unknown preset {cfg.preset!r}")
    return written
