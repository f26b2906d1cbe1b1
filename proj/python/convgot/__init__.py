"""Python front end for the convgot core: synth, train, run, eval and stats."""

import json
import os

from . import _core
from ._core import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    UsageError,
    auc,
    canonical_config,
    config_hash,
    hma,
    sha256,
)

__version__ = _core.__version__


def _ini(config):
    # accepts INI text or a path to an INI file
    if config is None:
        return None
    if os.path.exists(str(config)):
        with open(config, encoding="utf-8") as f:
            return f.read()
    return str(config)


def synth(out_dir, seed=None, dialogues=200, duration=60, config=None, overrides=()):
    _core.synth(str(out_dir), seed, dialogues, duration, _ini(config), list(overrides))


def train_perceiver(data_dir, out_dir, config=None, overrides=()):
    _core.train_perceiver(str(data_dir), str(out_dir), _ini(config), list(overrides))


def train_selector(data_dir, out_dir, config=None, overrides=()):
    _core.train_selector(str(data_dir), str(out_dir), _ini(config), list(overrides))


def train_decoder(data_dir, out_dir, config=None, overrides=()):
    _core.train_decoder(str(data_dir), str(out_dir), _ini(config), list(overrides))


def run(stream, out_dir, models=None, split="all", config=None, overrides=()):
    _core.run(str(stream), str(out_dir), None if models is None else str(models), split, _ini(config), list(overrides))


def evaluate(run_dir, data_dir, out_dir, config=None, overrides=()):
    return json.loads(_core.evaluate(str(run_dir), str(data_dir), str(out_dir), _ini(config), list(overrides)))


def stats(source, out_dir, config=None, overrides=()):
    return json.loads(_core.stats(str(source), str(out_dir), _ini(config), list(overrides)))


def event_table(ch0, ch1, tick_seconds=1.0, min_silence_ticks=1):
    return json.loads(_core.event_table(list(map(bool, ch0)), list(map(bool, ch1)), tick_seconds, min_silence_ticks))
