"""Declarative experiment configuration: INI-style sections of flat key/value pairs.

Sections and keys::

    [dataset]  n_classes n_max imbalance_factor input_dim class_center_separation
               within_class_stddev seed test_per_class path
    [train]    epochs batch_size lr momentum weight_decay lr_decay_epochs lr_decay
               alpha tau classifier_tau center_momentum views loss_kind hidden
               embed_dim seed
    [views]    many_min few_max views_per_group noise_scales
    [run]      output_dir seeds

Lists are comma separated. Unknown sections or keys are rejected with the
offending line number.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import LongTailedDatasetSpec, ViewPolicy
from .trainer import TrainConfig

OUTPUT_ROOT_ENV = "LTCONTRAST_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _ints(text):
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _floats(text):
    return tuple(float(t) for t in text.replace(" ", "").split(",") if t)


_DATASET = {f.name: f.type for f in fields(LongTailedDatasetSpec)}
_TRAIN = {f.name: f.type for f in fields(TrainConfig) if f.name != "view_policy"}
_LIST_PARSERS = {
    "lr_decay_epochs": _ints, "hidden": _ints, "views_per_group": _ints,
    "noise_scales": _floats, "seeds": _ints,
}
SCHEMA = {
    "dataset": set(_DATASET) | {"path"},
    "train": set(_TRAIN),
    "views": {f.name for f in fields(ViewPolicy)},
    "run": {"output_dir", "seeds"},
}
_SCALAR = {"int": int, "float": float, "str": str}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: LongTailedDatasetSpec = field(default_factory=LongTailedDatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str | None = None
    seeds: tuple = (0,)
    dataset_path: str | None = None

    def hash(self):
        # output location does not change results
        blob = {"dataset": asdict(self.dataset), "train": asdict(self.train), "dataset_path": self.dataset_path}
        text = json.dumps(blob, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def output_path(self, command):
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
        if self.output_dir:
            out = Path(self.output_dir)
            return out if out.is_absolute() else root / out
        return root / f"{command}-{self.hash()}"

    def with_train(self, **kw):
        return replace(self, train=replace(self.train, **kw))


def _key_lines(text):
    """Map (section, key) -> 1-based line number."""
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), n)
        elif s and not s.startswith(("#", ";")) and section is not None:
            key = re.split(r"[=:]", s, 1)[0].strip().lower()
            where[(section, key)] = n
    return where


def _convert(section, key, raw, line):
    try:
        if key in _LIST_PARSERS:
            return _LIST_PARSERS[key](raw)
        if section == "dataset" and key == "path" or section == "run" and key == "output_dir":
            return raw
        typ = (_DATASET if section == "dataset" else _TRAIN if section == "train" else {}).get(key, "int")
        typ = typ if isinstance(typ, str) else typ.__name__
        return _SCALAR.get(typ, str)(raw)
    except ValueError:
        raise ConfigError(f"line {line}: bad value {raw!r} for [{section}] {key}") from None


def parse_config(text, overrides=()):
    """Parse config text plus ``section.key=value`` overrides into an ExperimentConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", "?")
        raise ConfigError(f"line {line}: {exc.message.splitlines()[0]}") from None
    lines = _key_lines(text)
    values = {s: {} for s in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"line {lines.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            line = lines.get((section, key), "?")
            if key not in SCHEMA[section]:
                raise ConfigError(f"line {line}: unknown key {key!r} in [{section}]")
            values[section][key] = _convert(section, key, raw, line)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        name, raw = item.split("=", 1)
        section, key = name.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"override {item!r}: unknown key {key!r} in [{section}]")
        values[section][key] = _convert(section, key, raw, "override")
    try:
        ds_kw = {k: v for k, v in values["dataset"].items() if k != "path"}
        policy = ViewPolicy(**values["views"])
        train = TrainConfig(view_policy=policy, **values["train"])
        run = values["run"]
        return ExperimentConfig(
            dataset=LongTailedDatasetSpec(**ds_kw),
            train=train,
            output_dir=run.get("output_dir"),
            seeds=tuple(run.get("seeds", (train.seed,))),
            dataset_path=values["dataset"].get("path"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=()):
    return parse_config(Path(path).read_text(), overrides)


def dump_config(config):
    """Render a config back to text that ``parse_config`` accepts."""
    def fmt(v):
        return ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else str(v)

    out = ["[dataset]"]
    out += [f"{k} = {fmt(v)}" for k, v in asdict(config.dataset).items()]
    if config.dataset_path:
        out.append(f"path = {config.dataset_path}")
    out.append("\n[train]")
    out += [f"{k} = {fmt(v)}" for k, v in asdict(config.train).items() if k != "view_policy"]
    out.append("\n[views]")
    out += [f"{k} = {fmt(v)}" for k, v in asdict(config.train.view_policy).items()]
    out.append("\n[run]")
    if config.output_dir:
        out.append(f"output_dir = {config.output_dir}")
    out.append(f"seeds = {fmt(config.seeds)}")
    return "\n".join(out) + "\n"
