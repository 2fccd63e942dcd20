"""Cut-posterior inference for hidden Markov models with nonparametric emissions."""

import json

from . import _core
from ._core import (
    ConfigError,
    CuthmmError,
    MissingArtifact,
    coarsen,
    command_names,
    partition_edges,
    read_density_bands,
    read_draw_store,
    read_series,
    sample_transition_posterior,
    simulate,
)

__all__ = [
    "ConfigError",
    "CuthmmError",
    "MissingArtifact",
    "coarsen",
    "command_names",
    "config_hash",
    "default_config",
    "partition_edges",
    "read_density_bands",
    "read_draw_store",
    "read_series",
    "reproduce_paper",
    "resolve_config",
    "run_command",
    "run_directory",
    "sample_transition_posterior",
    "simulate",
    "spectral_estimate",
]


def _dump(config):
    return json.dumps(config or {})


def default_config():
    """The study defaults as a dict."""
    return json.loads(_core.default_config())


def resolve_config(config):
    """Overlays a partial config dict on the defaults and validates it."""
    return json.loads(_core.resolve_config(_dump(config)))


def config_hash(config):
    return _core.config_hash(_dump(config))


def run_directory(config=None, out="", seed=None, scale=""):
    return _core.run_directory(_dump(config), out, seed, scale)


def run_command(command, config=None, out="", seed=None, scale="", jobs=1):
    """Runs one stage and returns its manifest dict."""
    return json.loads(_core.run_command(command, _dump(config), out, seed, scale, jobs))


def reproduce_paper(config=None, out="", seed=None, scale="smoke", jobs=1):
    return json.loads(_core.reproduce_paper(_dump(config), out, seed, scale, jobs))


def spectral_estimate(y, level, states=2, seed=1, transform="sigmoid-linear"):
    return json.loads(_core.spectral_estimate(y, level, states, seed, transform))
