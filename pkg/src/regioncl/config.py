"""Flat key=value run configuration shared by every CLI command.

One namespace covers every module, with dotted keys grouped by section:
``synth.*`` (dataset generator), ``poi.*`` (skip-gram), ``graph.*``
(fusion thresholds), ``model.*`` (embedding width, heads, depth),
``view.*`` (view generation), ``loss.*`` (contrastive mixture and reward),
``train.*`` (optimizer and loop), ``eval.*`` (probes). Defaults come
straight from the dataclasses so the two can never drift apart. Unknown
keys are rejected by name; values are cast to the default's type.

Config files hold one ``key = value`` per line; blank lines and lines
starting with ``#`` are ignored.
"""

from __future__ import annotations

import dataclasses

from .errors import ConfigError
from .eval_harness import EvalConfig
from .losses import LossConfig
from .poi_embedding import SkipgramConfig
from .region_data import SynthConfig
from .trainer import TrainConfig
from .view_generator import ViewGenConfig


def _section(prefix: str, cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not dataclasses.MISSING \
            else f.default_factory()
        out[f"{prefix}.{f.name}"] = default
    return out


def _train_sections() -> dict:
    t = TrainConfig()
    out = {"graph.eps_p": t.eps_p, "graph.eps_d": t.eps_d,
           "model.d": t.d, "model.heads": t.heads,
           "model.n_layers": t.n_layers}
    for name in ("epochs", "lr", "weight_decay", "seed",
                 "checkpoint_every", "variant"):
        out[f"train.{name}"] = getattr(t, name)
    return out


DEFAULTS: dict = {}
DEFAULTS.update(_section("synth", SynthConfig))
DEFAULTS.update(_section("poi", SkipgramConfig))
DEFAULTS.update(_section("view", ViewGenConfig))
DEFAULTS.update(_section("loss", LossConfig))
DEFAULTS.update(_section("eval", EvalConfig))
DEFAULTS.update(_train_sections())


def cast_value(key: str, raw: str):
    """Cast the raw string to the type of the key's default."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = type(DEFAULTS[key])
    raw = raw.strip()
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} expects "
                          f"{kind.__name__}, got {raw!r}") from None


def apply_assignment(values: dict, text: str, where: str = "--set") -> None:
    """Apply one 'key=value' assignment in place."""
    if "=" not in text:
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    values[key] = cast_value(key, raw)


def load_config_file(path: str) -> dict:
    """Parse a key = value file; returns only the keys it sets."""
    values: dict = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            apply_assignment(values, stripped, where=f"{path}:{lineno}")
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
    return values


def resolve(config_path: str | None = None, assignments=(),
            seed: int | None = None) -> dict:
    """Defaults, then config file, then --set overrides, then --seed."""
    values = dict(DEFAULTS)
    if config_path is not None:
        values.update(load_config_file(config_path))
    for text in assignments:
        apply_assignment(values, text)
    if seed is not None:
        values["train.seed"] = int(seed)
        values["synth.seed"] = int(seed)
    return values


def build_synth_config(values: dict) -> SynthConfig:
    return SynthConfig(**{f.name: values[f"synth.{f.name}"]
                          for f in dataclasses.fields(SynthConfig)})


def build_train_config(values: dict,
                       checkpoint_dir: str | None = None) -> TrainConfig:
    sg = SkipgramConfig(**{f.name: values[f"poi.{f.name}"]
                           for f in dataclasses.fields(SkipgramConfig)})
    view = ViewGenConfig(**{f.name: values[f"view.{f.name}"]
                            for f in dataclasses.fields(ViewGenConfig)})
    loss = LossConfig(**{f.name: values[f"loss.{f.name}"]
                         for f in dataclasses.fields(LossConfig)})
    return TrainConfig(
        epochs=values["train.epochs"], lr=values["train.lr"],
        weight_decay=values["train.weight_decay"],
        d=values["model.d"], heads=values["model.heads"],
        n_layers=values["model.n_layers"],
        eps_p=values["graph.eps_p"], eps_d=values["graph.eps_d"],
        skipgram=sg, view=view, loss=loss,
        seed=values["train.seed"],
        checkpoint_every=values["train.checkpoint_every"],
        checkpoint_dir=checkpoint_dir,
        variant=values["train.variant"])


def build_eval_config(values: dict) -> EvalConfig:
    return EvalConfig(**{f.name: values[f"eval.{f.name}"]
                         for f in dataclasses.fields(EvalConfig)})


def defaults_lines() -> list:
    """One 'key = value' line per documented default, sorted."""
    return [f"{key} = {DEFAULTS[key]}" for key in sorted(DEFAULTS)]
