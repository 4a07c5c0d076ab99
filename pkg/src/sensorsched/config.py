"""Experiment configuration: versioned JSON with strict key checking.

Every CLI subcommand owns a flat key set with shipped defaults; a config
file may override any subset.  Files must carry ``"schema_version": 1``
and may not contain keys outside the subcommand's schema — typos fail
loudly instead of silently running the defaults.
"""

from __future__ import annotations

import json
import math
from typing import Optional

from .errors import ConfigError

CONFIG_VERSION = 1

_Z0_DEFAULT = 1.0 / (1.0 + math.exp(3.0))

DEFAULTS = {
    "logistic": {
        "seed": 0,
        "t_end": 6.0,
        "n_steps": 600,
        "x_min": 0.0,
        "x_max": 2.0,
        "n_points": 400,
        "prior_mean": 1.0,
        "prior_std": 0.25,
        "z0": _Z0_DEFAULT,
        "gamma": 0.05,
        "n_iters": 15,
        "step_size": 0.02,
        "n_replicates": 1,
        "n_eval_seeds": 20,
    },
    "linear2d": {
        "seed": 0,
        "t_end": 6.0,
        "n_steps": 600,
        "switch_time": 3.0,
        "sigma": 0.1,
        "gamma": 0.2,
        "prior_var": 1.0,
        "prior_mean": [0.0, 0.0],
        "n_iters": 100,
        "step_size": 0.02,
    },
    "compare": {
        "seed": 0,
        "t_end": 6.0,
        "n_steps": 600,
        "x_min": 0.0,
        "x_max": 2.0,
        "n_points": 400,
        "prior_mean": 1.0,
        "prior_std": 0.25,
        "z0": _Z0_DEFAULT,
        "gamma": 0.05,
        "centers": [1.5, 2.5, 3.5, 4.5],
        "width": 0.5,
        "n_seeds": 50,
    },
    "budget": {
        "gamma1": 1.0,
        "gamma2": 2.0,
    },
    "tau": {
        "x0": 1.0,
        "z0": _Z0_DEFAULT,
    },
    "gradcheck": {
        "seed": 0,
        "t_end": 6.0,
        "mask_frac": 0.1,
        "lg_n_steps": 6000,
        "lg_sigma": 0.1,
        "lg_gamma": 0.2,
        "lg_prior_var": 1.0,
        "lg_switch_time": 3.0,
        "lg_h": 1e-5,
        "nl_n_steps": 60,
        "nl_x_min": -2.0,
        "nl_x_max": 6.0,
        "nl_n_points": 321,
        "nl_prior_mean": 1.0,
        "nl_prior_std": 0.25,
        "nl_z0": _Z0_DEFAULT,
        "nl_gamma": 0.1,
        "nl_replicates": 50,
        "nl_h": 1e-4,
    },
}


def _coerce(key: str, value, default):
    """Type-check one entry against its default (ints may widen to float)."""
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"config key '{key}' has unsupported boolean value")
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"config key '{key}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"config key '{key}' must be a list of numbers, got {value!r}")
        return [float(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key '{key}' must be a string, got {value!r}")
        return value
    raise ConfigError(f"config key '{key}' has unsupported type")


def load_config(experiment: str, path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults for ``experiment``, overlaid by a JSON file and CLI overrides.

    ``overrides`` is a {key: value} mapping applied last (None values are
    skipped); it passes the same key and type checks as the file.
    """
    if experiment not in DEFAULTS:
        raise ConfigError(
            f"unknown experiment '{experiment}'; expected one of {sorted(DEFAULTS)}"
        )
    cfg = dict(DEFAULTS[experiment])

    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        version = data.pop("schema_version", None)
        if version != CONFIG_VERSION:
            raise ConfigError(
                f"config file {path} must declare \"schema_version\": {CONFIG_VERSION}"
                + (f", found {version!r}" if version is not None else " (missing)")
            )
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise ConfigError(
                f"config file {path} has unknown keys for '{experiment}': {', '.join(unknown)}"
            )
        for key, value in data.items():
            cfg[key] = _coerce(key, value, DEFAULTS[experiment][key])

    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in cfg:
                raise ConfigError(f"option '{key}' does not apply to '{experiment}'")
            cfg[key] = _coerce(key, value, DEFAULTS[experiment][key])
    return cfg
