"""Flat key-value experiment configuration.

The on-disk format is one dotted key per line, diff-able and trivially
parsed:

    epsilon = 0.1
    feedback.f = 3.0

Unknown keys are errors and are reported with their key path. A resolved
config written next to run outputs reproduces the run bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config"]

SCHEMES = ("ito-euler", "stratonovich-heun")
PRESET_NAMES = ("fig1", "fig2", "fig3a", "fig3b", "jarzynski")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """All physical and run parameters of one experiment."""

    epsilon: float = 0.1
    g: float = 0.625
    nu: float = 8.0
    tau_steps: int = 3000
    dt: float = 0.01
    delta_i: float = 1.0
    s0: float = 2500.0
    i0: float = 0.0
    beta: float = 10.0
    scheme: str = "stratonovich-heun"
    n_traj: int = 300
    seed: int = 42
    record_stride: int = 10
    feedback_f: float = 3.0
    feedback_enabled: bool = False
    preset: str = "fig1"

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme: expected one of {SCHEMES}, got {self.scheme!r}")
        if self.preset not in PRESET_NAMES:
            raise ConfigError(
                f"preset: expected one of {PRESET_NAMES}, got {self.preset!r}"
            )
        if self.tau_steps < 1:
            raise ConfigError("tau_steps: must be a positive integer")
        if self.dt <= 0:
            raise ConfigError("dt: must be positive")
        if self.n_traj < 1:
            raise ConfigError("n_traj: must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed: must be nonnegative")
        if self.record_stride < 1 or self.tau_steps % self.record_stride:
            raise ConfigError("record_stride: must divide tau_steps")
        if self.feedback_f < 0:
            raise ConfigError("feedback.f: must be nonnegative")

    @property
    def tau(self) -> float:
        return self.tau_steps * self.dt

    def caption_ratios(self) -> dict[str, float]:
        """Dimensionless parameter ratios in units of the time step."""
        return {
            "s0_over_delta_i2_in_dt": self.s0 / self.delta_i**2 / self.dt,
            "hbar_over_g_in_dt": 1.0 / (self.g * self.dt),
            "hbar_over_epsilon_in_dt": 1.0 / (self.epsilon * self.dt),
            "tau_in_dt": float(self.tau_steps),
        }


# flat key <-> dataclass field
_KEYMAP = {
    "epsilon": "epsilon",
    "g": "g",
    "nu": "nu",
    "tau_steps": "tau_steps",
    "dt": "dt",
    "delta_i": "delta_i",
    "s0": "s0",
    "i0": "i0",
    "beta": "beta",
    "scheme": "scheme",
    "n_traj": "n_traj",
    "seed": "seed",
    "record_stride": "record_stride",
    "feedback.f": "feedback_f",
    "feedback.enabled": "feedback_enabled",
    "preset": "preset",
}
_FIELD_TO_KEY = {v: k for k, v in _KEYMAP.items()}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, field_name: str, raw: str):
    t = _TYPES[field_name]
    raw = raw.strip()
    try:
        if t == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        return raw
    except ValueError as err:
        raise ConfigError(f"{key}: {err}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat key-value text over ``base`` (library defaults if None)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEYMAP:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        field_name = _KEYMAP[key]
        values[field_name] = _parse_value(key, field_name, raw)
    cfg = base or ExperimentConfig()
    return replace(cfg, **values)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize in a fixed key order with full float precision."""
    lines = []
    for key, field_name in _KEYMAP.items():
        val = getattr(cfg, field_name)
        if isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, float):
            text = f"{val:.17g}"
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_dict(cfg: ExperimentConfig) -> dict:
    """Flat-key dict embedded into run outputs."""
    return {key: getattr(cfg, field) for key, field in _KEYMAP.items()}
