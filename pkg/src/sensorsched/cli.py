"""Command-line interface.

``sensorsched <subcommand> [--config FILE] [--seed N] [--out DIR]
[--iters N] [--step X] [--replicates N]``

Subcommands: ``logistic``, ``linear2d``, ``compare``, ``budget``, ``tau``,
``gradcheck``.  Every run writes a ``report.json`` (embedding the resolved
config and master seed) plus CSV/SVG artifacts into the output directory.
The process exits nonzero on configuration errors, numerical failures, or
a failing gradient check.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .config import load_config
from .errors import SensorSchedError
from .experiments import (
    optimal_tau_dopt,
    run_budget_allocation,
    run_compare,
    run_gradcheck,
    run_linear2d_experiment,
    run_logistic_experiment,
)

# which config key each generic flag feeds, per subcommand
_ITER_KEY = {"logistic": "n_iters", "linear2d": "n_iters"}
_STEP_KEY = {"logistic": "step_size", "linear2d": "step_size"}
_REPL_KEY = {"logistic": "n_replicates", "compare": "n_seeds", "gradcheck": "nl_replicates"}

_RUNNERS = {
    "logistic": run_logistic_experiment,
    "linear2d": run_linear2d_experiment,
    "compare": run_compare,
    "gradcheck": run_gradcheck,
}

_SUMMARY_KEYS = {
    "logistic": ("final_schedule_mean", "tau_star", "mean_kl_optimized", "mean_kl_uniform"),
    "linear2d": ("utility_uniform", "utility_optimized", "mass_window_total"),
    "compare": ("best",),
    "gradcheck": ("lg_max_rel_err", "nl_max_rel_err", "all_pass"),
    "budget": ("alpha1", "alpha2"),
    "tau": ("tau",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensorsched",
        description="Sensor-schedule design for continuous-time filtering problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "logistic": "optimize the observation schedule for the logistic-curve signal",
        "linear2d": "optimize the schedule for the switching planar linear model",
        "compare": "rank candidate schedules by realized information gain",
        "budget": "closed-form two-sensor budget split",
        "tau": "most informative single observation time for the logistic curve",
        "gradcheck": "validate both adjoint gradients against finite differences",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="JSON config file (schema_version 1; unknown keys rejected)")
        p.add_argument("--seed", type=int, default=None, metavar="U64",
                       help="master seed overriding the config")
        p.add_argument("--out", metavar="DIR", default=None,
                       help=f"output directory (default ./out_{name})")
        p.add_argument("--iters", type=int, default=None,
                       help="optimizer iterations (logistic / linear2d)")
        p.add_argument("--step", type=float, default=None,
                       help="optimizer step size (logistic / linear2d)")
        p.add_argument("--replicates", type=int, default=None,
                       help="gradient replicates / evaluation seeds, where applicable")
    return parser


def _overrides(command: str, args: argparse.Namespace) -> dict:
    ov = {}
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.iters is not None:
        key = _ITER_KEY.get(command)
        if key is None:
            raise SensorSchedError(f"--iters does not apply to '{command}'")
        ov[key] = args.iters
    if args.step is not None:
        key = _STEP_KEY.get(command)
        if key is None:
            raise SensorSchedError(f"--step does not apply to '{command}'")
        ov[key] = args.step
    if args.replicates is not None:
        key = _REPL_KEY.get(command)
        if key is None:
            raise SensorSchedError(f"--replicates does not apply to '{command}'")
        ov[key] = args.replicates
    return ov


def _write_report(out_dir: str, report: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        cfg = load_config(command, args.config, _overrides(command, args))
        out_dir = args.out if args.out is not None else f"out_{command}"
        if command == "budget":
            a1, a2 = run_budget_allocation(cfg["gamma1"], cfg["gamma2"])
            report = {"experiment": "budget", "config": dict(cfg), "alpha1": a1, "alpha2": a2}
        elif command == "tau":
            tau = optimal_tau_dopt(cfg["x0"], cfg["z0"])
            report = {"experiment": "tau", "config": dict(cfg), "tau": tau}
        else:
            report = _RUNNERS[command](cfg, out_dir)
    except SensorSchedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    path = _write_report(out_dir, report)
    for key in _SUMMARY_KEYS[command]:
        print(f"{key}: {report[key]}")
    print(f"report: {path}")
    if command == "gradcheck" and not report["all_pass"]:
        print("error: gradient check failed", file=sys.stderr)
        return 1
    if report.get("aborted"):
        print(f"error: run aborted: {report.get('message', '')}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
