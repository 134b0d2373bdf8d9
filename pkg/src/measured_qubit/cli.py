"""Command line interface.

    measured-qubit fig1 [--seed N] [--out DIR] ...
    measured-qubit run --config experiment.config [--out DIR]

Each subcommand resolves a full configuration, runs it and writes the
resolved config, the delimited outputs and the rendered figures into the
output directory (current directory or $MEASURED_QUBIT_OUTDIR by default).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .presets import PRESETS, preset_config
from .runner import run_experiment

__all__ = ["main", "build_parser"]

_SCHEME_ALIAS = {"ito": "ito-euler", "stratonovich": "stratonovich-heun"}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="base RNG seed")
    sub.add_argument("--n-traj", type=int, default=None,
                     help="trajectories per initial eigenstate")
    sub.add_argument("--scheme", choices=sorted(_SCHEME_ALIAS), default=None,
                     help="integration scheme")
    sub.add_argument("--out", type=str, default=None, help="output directory")
    sub.add_argument("--feedback", action=argparse.BooleanOptionalAction,
                     default=None, help="enable or disable gain feedback")
    sub.add_argument("--f", dest="f_strength", type=float, default=None,
                     help="feedback strength")
    sub.add_argument("--no-plots", action="store_true",
                     help="skip figure rendering")
    sub.add_argument("--jobs", type=int, default=1,
                     help="worker processes for the ensemble")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="measured-qubit",
        description="Quantum-trajectory thermodynamics of a continuously "
                    "monitored driven qubit.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name in PRESETS:
        sub = subs.add_parser(name, help=f"run the {name} preset")
        _add_common(sub)
    run = subs.add_parser("run", help="run from a flat config file")
    run.add_argument("--config", required=True, help="path to the config file")
    _add_common(run)
    return parser


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    if args.command == "run":
        cfg = load_config(args.config)
    else:
        cfg = preset_config(args.command)
    from dataclasses import replace

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_traj is not None:
        overrides["n_traj"] = args.n_traj
    if args.scheme is not None:
        overrides["scheme"] = _SCHEME_ALIAS[args.scheme]
    if args.feedback is not None:
        overrides["feedback_enabled"] = args.feedback
    if args.f_strength is not None:
        overrides["feedback_f"] = args.f_strength
    return replace(cfg, **overrides) if overrides else cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
    except (ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out_dir = args.out or os.environ.get("MEASURED_QUBIT_OUTDIR", ".")
    try:
        written = run_experiment(
            cfg, out_dir, plots=not args.no_plots, n_jobs=args.jobs
        )
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
