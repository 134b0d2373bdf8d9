"""Named experiment presets.

All presets share the base parameter set, chosen so that in units of the
integration step: s0/delta_i^2 = 2.5e5 dt, 1/g = 160 dt, 1/epsilon =
1000 dt, nu = 8, and the default duration is 3000 steps of dt = 0.01.

fig1       one monitored trajectory: state, detector record, energy ledger
fig2       transition probabilities with their work/heat split, open loop
fig3a      closed-loop vs open-loop transition probabilities, 1400 steps
fig3b      same comparison at 2500 steps
jarzynski  free-energy estimates from closed-loop runs at both durations
"""

from __future__ import annotations

from dataclasses import replace

from .config import ExperimentConfig

__all__ = ["PRESETS", "preset_config"]

_BASE = ExperimentConfig()  # defaults are the fig1 parameter set

PRESETS: dict[str, ExperimentConfig] = {
    "fig1": replace(_BASE, preset="fig1"),
    "fig2": replace(_BASE, preset="fig2"),
    "fig3a": replace(
        _BASE, preset="fig3a", tau_steps=1400, record_stride=10,
        feedback_enabled=True, feedback_f=3.0,
    ),
    "fig3b": replace(
        _BASE, preset="fig3b", tau_steps=2500, record_stride=10,
        feedback_enabled=True, feedback_f=3.0,
    ),
    "jarzynski": replace(
        _BASE, preset="jarzynski", tau_steps=2500, record_stride=10,
        feedback_enabled=True, feedback_f=3.0,
    ),
}

# closed-loop durations evaluated by the jarzynski preset, in steps
JARZYNSKI_DURATIONS = (1400, 2500)

# reported reference values for the free-energy comparison
PAPER_REFERENCE = {
    "unitary": -0.495,
    "tau1_feedback": -0.488,
    "tau2_feedback": -0.496,
}


def preset_config(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
