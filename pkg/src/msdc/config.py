"""Run configuration: a nested YAML document validated against known sections.

Unknown keys are rejected so that typos fail loudly. Command-line overrides use
dotted paths, e.g. ``--trainer.max_epochs=5``.
"""
from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .errors import ConfigError

DEFAULTS: dict = {
    "data": {
        "root": None,  # falls back to $MSDC_DATA_ROOT
        "house": 1,
        "appliances": ["fridge"],
        "interval": 3.0,
        "max_gap": None,
        "zero_fraction": 0.995,
        "states_dir": None,  # default: <root>/house_<n>/states
    },
    "extraction": {
        "bandwidth": None,
        "bandwidth_fraction": 0.05,
        "min_bandwidth": 1.0,
        "min_fraction": 0.005,
        "tol": 1e-3,
        "max_iters": 500,
        "max_seeds": 10_000,
    },
    "network": {
        "input_len": 400,
        "output_len": 64,
        "conv_channels": [30, 30, 40, 50, 50, 50],
        "kernel_sizes": [10, 8, 6, 5, 5, 5],
        "hidden": 1024,
    },
    "crf": {"emission": "log_prob"},
    "trainer": {
        "loss": "msdc",
        "train_stride": None,
        "inference_stride": None,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "max_epochs": 30,
        "patience": 5,
        "seed": 0,
        "seeds": 1,
        "split": [0.7, 0.1, 0.2],
    },
    "ablation": {"mode": "multi_state", "threshold": None},
    "metrics": {"period": 1200},
    "simulator": {
        "seed": 0,
        "length": 200_000,
        "interval": 3.0,
        "start_timestamp": 1_303_132_964,
        "base_load": 30.0,
        "noise_std": 5.0,
        "profile": "constant",
        "drift_amplitude": 0.0,
        "drift_period": 28_800,
        "appliances": [
            {"name": "dishwasher", "means": [0.0, 200.0, 1100.0], "stds": [2.0, 4.0, 5.0],
             "transition": [[0.97, 0.03, 0.0], [0.0, 0.97, 0.03], [0.03, 0.0, 0.97]]},
            {"name": "fridge", "means": [0.0, 500.0], "stds": [1.0, 5.0],
             "transition": [[0.99, 0.01], [0.02, 0.98]]},
        ],
    },
    "theory": {
        "probs": [1 / 3, 1 / 3, 1 / 3],
        "means": [0.0, 200.0, 1100.0],
        "stds": [12.0, 12.0, 12.0],
        "sigma": None,
        "n": 100_000,
        "seed": 0,
        "xi": 5.0,
    },
    "output": {"dir": "runs"},
}

APPLIANCE_KEYS = {"name", "means", "stds", "transition", "initial"}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def _check_appliances(cfg: dict) -> None:
    apps = cfg["simulator"]["appliances"]
    if not isinstance(apps, list) or not apps:
        raise ConfigError("simulator.appliances must be a nonempty list")
    for i, app in enumerate(apps):
        if not isinstance(app, dict):
            raise ConfigError(f"simulator.appliances[{i}] must be a mapping")
        extra = set(app) - APPLIANCE_KEYS
        if extra:
            raise ConfigError(f"unknown key(s) {sorted(extra)} in simulator.appliances[{i}]")
        missing = {"name", "means", "stds", "transition"} - set(app)
        if missing:
            raise ConfigError(f"simulator.appliances[{i}] is missing {sorted(missing)}")


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value`` -> (["section", "key"], parsed value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    path, raw = text.split("=", 1)
    keys = path.split(".")
    if len(keys) < 2 or not all(keys):
        raise ConfigError(f"override path {path!r} must be section.key")
    try:
        value = yaml.safe_load(raw) if raw else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    return keys, value


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, doc)
    for text in overrides:
        keys, value = parse_override(text)
        nested = value
        for key in reversed(keys):
            nested = {key: nested}
        _merge(cfg, nested)
    _check_appliances(cfg)
    return cfg


def data_root(cfg: dict) -> Path:
    root = cfg["data"]["root"] or os.environ.get("MSDC_DATA_ROOT")
    if not root:
        raise ConfigError("no dataset root: set data.root or MSDC_DATA_ROOT")
    return Path(root)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
