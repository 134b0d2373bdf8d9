"""Figure rendering for the report path.

Each renderer takes the already-computed arrays and writes one PNG next to
the delimited output. Everything uses the non-interactive Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .thermo import TransitionDecomposition

__all__ = [
    "render_trajectory",
    "render_transition_bars",
    "render_feedback_comparison",
    "render_jarzynski",
]

_LABELS = [(0, 0), (1, 0), (0, 1), (1, 1)]


def _label(m: int, n: int) -> str:
    sym = {0: "-", 1: "+"}
    return f"({sym[m]},{sym[n]})"


def render_trajectory(
    times: np.ndarray,
    dW: np.ndarray,
    dQ: np.ndarray,
    dU: np.ndarray,
    currents: np.ndarray,
    path: Path,
) -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    t_inc = times[1:]
    ax1.plot(t_inc, dW, color="tab:blue", lw=0.7, label="dW")
    ax1.plot(t_inc, dQ, color="tab:red", lw=0.7, label="dQ")
    ax1.plot(t_inc, dU, color="k", lw=0.7, ls="--", alpha=0.7, label="dU")
    ax1.set_ylabel("energy increment")
    ax1.legend(loc="upper left", frameon=False)
    ax2.plot(t_inc, currents, color="0.6", lw=0.4)
    ax2.set_xlabel("t")
    ax2.set_ylabel("detector current")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_transition_bars(decomp: TransitionDecomposition, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.2
    xs = np.arange(len(_LABELS))
    series = [
        ("initial", decomp.p0, None, "purple"),
        ("final", decomp.p_tau, decomp.se_p_tau, "gold"),
        ("work part", decomp.dp_w, decomp.se_dp_w, "steelblue"),
        ("heat part", decomp.dp_q, decomp.se_dp_q, "firebrick"),
    ]
    for j, (name, mat, err, color) in enumerate(series):
        vals = [mat[m, n] for m, n in _LABELS]
        errs = [err[m, n] for m, n in _LABELS] if err is not None else None
        ax.bar(xs + (j - 1.5) * width, vals, width, yerr=errs, capsize=2,
               label=name, color=color)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xticks(xs, [_label(m, n) for m, n in _LABELS])
    ax.set_xlabel("transition (m, n)")
    ax.set_ylabel("probability / contribution")
    ax.legend(frameon=False, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_feedback_comparison(
    unitary: np.ndarray,
    feedback: TransitionDecomposition,
    open_loop: TransitionDecomposition,
    path: Path,
) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.25
    xs = np.arange(len(_LABELS))
    series = [
        ("isolated", unitary, None, "firebrick"),
        ("feedback", feedback.p_tau, feedback.se_p_tau, "orange"),
        ("no feedback", open_loop.p_tau, open_loop.se_p_tau, "gold"),
    ]
    for j, (name, mat, err, color) in enumerate(series):
        vals = [mat[m, n] for m, n in _LABELS]
        errs = [err[m, n] for m, n in _LABELS] if err is not None else None
        ax.bar(xs + (j - 1) * width, vals, width, yerr=errs, capsize=2,
               label=name, color=color)
    ax.set_xticks(xs, [_label(m, n) for m, n in _LABELS])
    ax.set_xlabel("transition (m, n)")
    ax.set_ylabel("final transition probability")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_jarzynski(entries: list[dict], delta_f_exact: float, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = np.arange(len(entries))
    vals = [e["delta_f_est"] for e in entries]
    errs = [3 * e["stderr"] for e in entries]
    ax.errorbar(xs, vals, yerr=errs, fmt="o", color="tab:blue", capsize=4,
                label="estimate (3 se)")
    ax.axhline(delta_f_exact, color="k", ls="--", lw=1, label="closed form")
    ax.set_xticks(xs, [f"{e['tau_steps']} steps" for e in entries])
    ax.set_ylabel("free energy change")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
