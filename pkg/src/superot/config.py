"""Experiment configuration: defaults, presets, YAML loading and validation.

A config is a mapping with the sections ``data``, ``preprocess``, ``train``,
``sinkhorn`` and ``eval`` plus an optional top-level ``preset`` and
``seed``. Every key has a default; unknown keys are rejected so that a typo
cannot silently fall back to a default. The fully materialised config is
what gets echoed into run manifests.
"""

from __future__ import annotations

import copy
from dataclasses import fields
from pathlib import Path

import yaml

from .data import SynthConfig
from .errors import ContractError, SchemaError
from .nets import TrainConfig

SECTIONS = ("data", "preprocess", "train", "sinkhorn", "eval")

_SYNTH = {f.name: f.default for f in fields(SynthConfig) if f.name != "seed"}
_TRAIN = {f.name: f.default for f in fields(TrainConfig) if f.name not in ("seed", "n_pairs")}

DEFAULTS = {
    "seed": 0,
    "data": {"format": "csv", "fraction": 0.8, **_SYNTH},
    "preprocess": {"n_components": 20},
    "train": {**_TRAIN, "pair_fractions": [0.2, 0.4, 0.6], "checkpoint_every": 25},
    "sinkhorn": {"epsilon": None, "epsilon_factor": 0.05, "cost": "sq_euclidean",
                 "tol": 1e-8, "max_iter": 10_000, "mass_floor": 1e-12},
    "eval": {"l2": 1e-3, "p_threshold": 1e-6, "welch": False, "seeds": [0, 1, 2],
             "embedding": True},
}

# values that may legitimately be null
_NULLABLE = {("sinkhorn", "epsilon")}

PRESETS = {
    "desk": {},
    # a short run at the default step size; used by the acceptance runs
    "fast": {"train": {"max_epochs": 300}},
    # the published training setup: width, PCA size, transport weight, learning rate
    "paper": {"preprocess": {"n_components": 100},
              "train": {"hidden": 1000, "lambda_trans": 0.6, "lr": 1e-4}},
}

_POSITIVE_INTS = {("data", k) for k in ("n_genes", "n_pca_informative", "n_day2", "n_day46",
                                        "n_clones")}
_POSITIVE_INTS |= {("preprocess", "n_components"), ("train", "hidden"), ("train", "batch_size"),
                   ("sinkhorn", "max_iter")}


def _check_type(section, key, value, default):
    where = f"{section}.{key}" if section else key
    if value is None:
        if (section, key) in _NULLABLE:
            return value
        raise SchemaError(f"{where} may not be null")
    if (section, key) == ("sinkhorn", "epsilon"):
        default = 0.0
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SchemaError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise SchemaError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise SchemaError(f"{where} must be a non-empty list, got {value!r}")
        return [_check_type(section, key, v, default[0]) for v in value]
    raise SchemaError(f"{where}: unsupported value {value!r}")


def _merge(base, doc, origin):
    if not isinstance(doc, dict):
        raise SchemaError(f"{origin}: a config must be a mapping of sections")
    for key, value in doc.items():
        if key == "preset":
            continue
        if key == "seed":
            base["seed"] = _check_type("", "seed", value, 0)
            continue
        if key not in SECTIONS:
            raise SchemaError(f"{origin}: unknown section {key!r}")
        if value is None:
            continue
        if not isinstance(value, dict):
            raise SchemaError(f"{origin}: section {key!r} must be a mapping")
        for k, v in value.items():
            if k not in DEFAULTS[key]:
                raise SchemaError(f"{origin}: unknown key {key}.{k}")
            base[key][k] = _check_type(key, k, v, DEFAULTS[key][k])
    return base


def parse_override(text):
    """``section.key=value`` with a YAML-typed value."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise SchemaError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    section, key = path.split(".", 1)
    return {section: {key: _numeric(yaml.safe_load(raw))}}


def _numeric(value):
    """YAML 1.1 reads ``1e-3`` (no dot) as a string; take it as the number it looks like."""
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    if isinstance(value, list):
        return [_numeric(v) for v in value]
    return value


def build_config(doc=None, preset=None, overrides=(), seed=None) -> dict:
    """Defaults, then the preset, then the file, then command-line overrides."""
    doc = doc or {}
    if not isinstance(doc, dict):
        raise SchemaError("a config must be a mapping of sections")
    name = preset or doc.get("preset") or "desk"
    if name not in PRESETS:
        raise SchemaError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, PRESETS[name], f"preset {name}")
    _merge(cfg, doc, "config")
    for text in overrides:
        _merge(cfg, parse_override(text), "override")
    if seed is not None:
        cfg["seed"] = _check_type("", "seed", seed, 0)
    cfg["preset"] = name
    validate(cfg)
    return cfg


def load_config(path=None, preset=None, overrides=(), seed=None) -> dict:
    doc = {}
    if path is not None:
        try:
            doc = _numeric_doc(yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {})
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: not valid YAML ({exc})") from None
    return build_config(doc, preset, overrides, seed)


def _numeric_doc(doc):
    if isinstance(doc, dict):
        return {k: _numeric_doc(v) for k, v in doc.items()}
    return _numeric(doc)


def validate(cfg):
    for section, key in _POSITIVE_INTS:
        if cfg[section][key] < 1:
            raise SchemaError(f"{section}.{key} must be at least 1, got {cfg[section][key]}")
    if cfg["data"]["format"] not in ("csv", "packed"):
        raise SchemaError("data.format must be 'csv' or 'packed'")
    if not 0.0 < cfg["data"]["fraction"] < 1.0:
        raise SchemaError("data.fraction must lie in (0, 1)")
    if cfg["sinkhorn"]["cost"] not in ("euclidean", "sq_euclidean"):
        raise SchemaError("sinkhorn.cost must be 'euclidean' or 'sq_euclidean'")
    eps = cfg["sinkhorn"]["epsilon"]
    if eps is not None and eps <= 0:
        raise SchemaError("sinkhorn.epsilon must be positive")
    if any(not 0.0 < f <= 1.0 for f in cfg["train"]["pair_fractions"]):
        raise SchemaError("train.pair_fractions must lie in (0, 1]")
    try:
        train_config(cfg)
        synth_config(cfg)
    except ContractError as exc:
        raise SchemaError(str(exc)) from None
    return cfg


def synth_config(cfg, seed=None) -> SynthConfig:
    kw = {k: cfg["data"][k] for k in _SYNTH}
    kw["seed"] = cfg["seed"] if seed is None else int(seed)
    sc = SynthConfig(**kw)
    if sc.n_day2 < 2 * sc.n_clones or sc.n_day46 < 2 * sc.n_clones:
        raise SchemaError("data.n_day2 and data.n_day46 must be at least twice data.n_clones")
    if not 0.0 < sc.de_gene_fraction < 1.0:
        raise SchemaError("data.de_gene_fraction must lie in (0, 1)")
    return sc


def train_config(cfg, seed=None, n_pairs=0) -> TrainConfig:
    kw = {k: cfg["train"][k] for k in _TRAIN}
    return TrainConfig(**kw, seed=cfg["seed"] if seed is None else int(seed), n_pairs=int(n_pairs))
