"""Channel fingerprint synthesis, diffusion reconstruction and compression."""

import json

from . import _core
from ._core import (
    EXIT_CONFIG,
    EXIT_FORMAT,
    EXIT_OK,
    EXIT_RUNTIME,
    ConfigError,
    DomainError,
    FormatError,
    InfeasibleError,
    NumericalError,
    linear_schedule,
    mse,
    nmse,
    psnr,
    solve_knapsack,
    ssim,
)

COMMANDS = ("gen", "train", "sample", "prune", "distill", "eval", "plot")


def run(command, out, config=None, overrides=(), seed=None):
    """Run one command; returns its manifest as a dict."""
    text = _core.run_command(command, str(out), None if config is None else str(config), list(overrides), seed)
    return json.loads(text)


def default_config():
    return json.loads(_core.default_config())


def config_hash(tree):
    return _core.config_hash(json.dumps(tree))


def rasterize(scenario, resolution):
    """Power map in dB for a scenario dict (missing keys take defaults)."""
    return _core.rasterize(json.dumps(scenario), resolution)


def read_dataset(path):
    """Returns (header dict, [(hr, lr), ...]) with arrays shaped (res, res, channels)."""
    header, pairs = _core.read_dataset(str(path))
    return json.loads(header), pairs
