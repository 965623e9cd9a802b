"""Flat ``key=value`` experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import PATTERNS, ConfigurationError, format_rules, parse_rules
from .federation import (AGGREGATIONS, ANCHOR_MODES, CLUSTERING_INPUTS, VARIANTS, WEIGHT_MODES,
                         AlgorithmConfig)

# file keys that differ from field names
ALIASES = {"E": "local_epochs", "s": "balanced_steps", "T_s": "align_start", "lambda": "align_lambda"}
FIELD_TO_KEY = {v: k for k, v in ALIASES.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    # algorithm
    variant: str = "fedccfa"
    clustering_input: str = "balanced"
    anchors: str = "clustered"
    alignment_weight: str = "adaptive"
    gamma: float = 20.0
    align_lambda: float = 1.0
    aggregation: str = "uniform"
    align_start: int = 20
    local_epochs: int = 5
    classifier_epochs: int = 1
    balanced_steps: int = 5
    per_class_batch: int = 5
    batch_size: int = 64
    eta_theta: float = 0.01
    eta_phi: float = 0.1
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    eps: float = 0.1
    min_samples: int = 1
    tau: float = 0.5
    participation: float = 1.0
    workers: int = 1
    # data
    dataset: str = "synthetic"
    num_classes: int = 10
    input_dim: int = 20
    hidden_dim: int = 32
    train_per_class: int = 200
    test_per_class: int = 50
    separation: float = 6.0
    noise: float = 1.0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # federation and drift
    clients: int = 20
    alpha: float = 0.5
    min_per_class: int = 5
    drift: str = "none"
    drift_fraction: float = 0.5
    drift_rules: str = "reference"
    # run
    rounds: int = 200
    eval_interval: int = 1
    seeds: tuple = (0, 1, 2)
    output_dir: str = "runs/default"
    dump_distances: bool = False

    def algorithm(self) -> AlgorithmConfig:
        names = AlgorithmConfig.field_names()
        return AlgorithmConfig(**{n: getattr(self, n) for n in names})

    def rules(self):
        return parse_rules(self.drift_rules)


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _seeds(text: str) -> tuple:
    seeds = tuple(int(s) for s in text.split(",") if s.strip())
    if not seeds:
        raise ValueError("seeds must be non-empty")
    return seeds


def _choice(options):
    def check(value):
        if value not in options:
            raise ValueError(f"{value!r} not in {options}")
    return check


def _at_least(bound):
    def check(value):
        if value < bound:
            raise ValueError(f"must be >= {bound}")
    return check


def _positive(value):
    if not value > 0:
        raise ValueError("must be > 0")


def _fraction(value):
    if not 0 < value <= 1:
        raise ValueError("must lie in (0, 1]")


def _rules(value):
    parse_rules(value)


CHECKS = {
    "variant": _choice(VARIANTS),
    "clustering_input": _choice(CLUSTERING_INPUTS),
    "anchors": _choice(ANCHOR_MODES),
    "alignment_weight": _choice(WEIGHT_MODES),
    "aggregation": _choice(AGGREGATIONS),
    "dataset": _choice(("synthetic", "idx")),
    "drift": _choice(PATTERNS),
    "gamma": _positive, "tau": _positive, "eps": _positive, "alpha": _positive,
    "eta_theta": _at_least(0.0), "eta_phi": _at_least(0.0), "lr": _at_least(0.0),
    "momentum": _at_least(0.0), "weight_decay": _at_least(0.0), "align_lambda": _at_least(0.0),
    "participation": _fraction, "drift_fraction": _fraction,
    "align_start": _at_least(0), "local_epochs": _at_least(0), "classifier_epochs": _at_least(0),
    "balanced_steps": _at_least(0), "min_per_class": _at_least(0), "noise": _at_least(0.0),
    "per_class_batch": _at_least(1), "batch_size": _at_least(1), "min_samples": _at_least(1),
    "workers": _at_least(1), "input_dim": _at_least(1), "hidden_dim": _at_least(1),
    "train_per_class": _at_least(1), "test_per_class": _at_least(1), "clients": _at_least(1),
    "rounds": _at_least(1), "eval_interval": _at_least(1), "num_classes": _at_least(2),
    "drift_rules": _rules,
}


def _converter(field_type):
    return {"int": int, "float": float, "str": str, "bool": _bool, "tuple": _seeds}[field_type]


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        name = ALIASES.get(key, key)
        if name not in FIELD_TYPES:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        try:
            parsed = _converter(FIELD_TYPES[name])(value)
            if name in CHECKS:
                CHECKS[name](parsed)
        except ValueError as exc:
            raise ConfigurationError(f"{where}: bad value for {key!r}: {exc}") from None
        values[name] = parsed
        lines[name] = where

    config = replace(ExperimentConfig(), **values)
    try:
        for rule in config.rules() if config.drift != "none" else ():
            rule.validate(config.num_classes)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{lines.get('drift_rules', lines.get('num_classes', source))}: {exc}") from None
    if config.dataset == "idx" and not all((config.train_images, config.train_labels,
                                             config.test_images, config.test_labels)):
        raise ConfigurationError(f"{lines.get('dataset', source)}: dataset=idx needs train_images, "
                                 "train_labels, test_images and test_labels")
    return config


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def serialize_config(config: ExperimentConfig) -> str:
    out = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.type == "tuple":
            text = ",".join(map(str, value))
        elif f.type == "bool":
            text = "true" if value else "false"
        elif f.name == "drift_rules":
            text = format_rules(parse_rules(value))
        else:
            text = repr(value) if f.type == "float" else str(value)
        out.append(f"{FIELD_TO_KEY.get(f.name, f.name)}={text}")
    return "\n".join(out) + "\n"
