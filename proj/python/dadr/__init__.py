"""Python access to the dadr core: synthetic data, metrics and experiment runs."""

import json

from ._dadr import (
    ConfigError,
    NumericError,
    TrainingError,
    adain,
    dice,
    experiments,
    generate_dataset,
    instance_norm,
    kfold_split,
    known_keys,
    render_scene,
    resolve_config,
    summarize,
    total_loss,
)
from ._dadr import run_experiment as _run_experiment


def config_text(**overrides):
    """Builds config text from keyword overrides; dots in keys become '__'."""
    return "".join(f"{k.replace('__', '.')} = {v}\n" for k, v in overrides.items())


def run_experiment(config_text, base_dir="."):
    """Runs one experiment and returns its metrics records as dicts."""
    return [json.loads(r) for r in _run_experiment(config_text, base_dir)]


__all__ = [
    "ConfigError",
    "NumericError",
    "TrainingError",
    "adain",
    "config_text",
    "dice",
    "experiments",
    "generate_dataset",
    "instance_norm",
    "kfold_split",
    "known_keys",
    "render_scene",
    "resolve_config",
    "run_experiment",
    "summarize",
    "total_loss",
]
