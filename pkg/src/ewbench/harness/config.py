"""Run configuration: documented defaults, a YAML file and ``key=value`` overrides.

Keys are dotted paths into a two-level mapping (``section.name``). Unknown
keys are rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from ..ar import ArParams
from ..tc import TcParams


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {
        "lead_step_hours": 6,
        "max_lead_hours": 240,
        "min_valid_fraction": 0.5,
        "jobs": 1,
    },
    "temperature": {
        "min_run_days": 3,
        "max_gap_days": 1,
        "relax_hours": 24.0,
        "relax_days": 1,
    },
    "ar": {f.name: f.default for f in dataclasses.fields(ArParams)},
    "tc": {f.name: f.default for f in dataclasses.fields(TcParams)},
    "landfall": {
        "mode": "first",
        "window_hours": 24.0,
        "min_island_cells": 4,
    },
    "severe": {
        "pph_sigma": 1.5,
        "pph_peak": 0.6,
        "weight_tornado_hail": 10.0,
        "pph_contour": 0.01,
        "pph_threshold": 0.01,
        "cbss_threshold": 15000.0,
        "coverage": 0.5,
    },
}


def _coerce(key: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    return value


def merge(base: Mapping[str, Mapping[str, Any]], overrides: Mapping[str, Any]) -> dict:
    """Return ``base`` updated by a nested ``overrides`` mapping, with type checks."""
    out = copy.deepcopy(dict(base))
    for section, values in (overrides or {}).items():
        if section not in out:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, Mapping):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for name, value in values.items():
            if name not in out[section]:
                raise ConfigError(f"unknown config key {section}.{name}")
            out[section][name] = _coerce(f"{section}.{name}", DEFAULTS[section][name], value)
    return out


def parse_assignment(text: str) -> tuple[str, str, Any]:
    """Split ``section.name=value``; the value is parsed as YAML."""
    key, sep, raw = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise ConfigError(f"expected section.name=value, got {text!r}")
    return section, name, yaml.safe_load(raw) if raw.strip() else ""


def load_config(path=None, assignments: Iterable[str] = ()) -> dict:
    """Defaults, then the YAML file at ``path``, then each ``--set`` assignment."""
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        config = merge(config, doc)
    for text in assignments:
        section, name, value = parse_assignment(text)
        config = merge(config, {section: {name: value}})
    return config


def ar_params(config: Mapping) -> ArParams:
    return ArParams(**config["ar"])


def tc_params(config: Mapping) -> TcParams:
    return TcParams(**config["tc"])
