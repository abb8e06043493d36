"""Run configuration: profile constant sets, JSON config files, overrides.

A config file is a JSON object whose keys are RunConfig fields; unknown
keys are rejected. The JSON key for the attack iteration cap is "T"
(matching the config-file contract); in code the field is `iterations`.
Resolution order: profile defaults, then config file, then CLI flags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .model import Hyper
from .training import TrainConfig

PROFILE_DESK = "desk"
PROFILE_PAPER = "paper"


@dataclass(frozen=True)
class RunConfig:
    d: int = 16384
    window: int = 512
    stride: int = 512
    n_filters: int = 64
    h: int = 128
    e: int = 8
    decov_weight: float = 0.1
    learning_rate: float = 0.05
    epochs: int = 45
    batch_size: int = 32
    seed: int = 0
    q_max: int = 2048
    iterations: int = 20  # JSON key: "T"
    budgets: tuple[int, ...] = (256, 512, 1024, 2048)
    refresh: str = "per-iteration"

    def hyper(self) -> Hyper:
        return Hyper(
            d=self.d,
            e=self.e,
            window=self.window,
            stride=self.stride,
            n_filters=self.n_filters,
            h=self.h,
            decov_weight=self.decov_weight,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            hyper=self.hyper(),
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )


_PROFILES = {
    PROFILE_DESK: RunConfig(),
    PROFILE_PAPER: RunConfig(
        d=1_000_000,
        n_filters=128,
        q_max=10_000,
        budgets=(2000, 4000, 6000, 8000, 10_000),
    ),
}

_JSON_ALIASES = {"T": "iterations"}
_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def profile_config(name: str) -> RunConfig:
    if name not in _PROFILES:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(_PROFILES)}")
    return _PROFILES[name]


def load_config_file(path: str | Path) -> dict:
    """Parse a JSON config file into a {field: value} override dict."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    overrides = {}
    for key, value in raw.items():
        name = _JSON_ALIASES.get(key, key)
        if name not in _FIELD_NAMES:
            raise ValueError(f"config file {path}: unknown key {key!r}")
        if name == "budgets":
            value = tuple(int(v) for v in value)
        overrides[name] = value
    return overrides


def resolve_config(profile: str = PROFILE_DESK, config_path=None,
                   flag_overrides: dict | None = None) -> RunConfig:
    """Profile defaults, overlaid by the config file, overlaid by flags."""
    cfg = profile_config(profile)
    if config_path is not None:
        cfg = replace(cfg, **load_config_file(config_path))
    if flag_overrides:
        clean = {k: v for k, v in flag_overrides.items() if v is not None}
        if "budgets" in clean:
            clean["budgets"] = tuple(int(v) for v in clean["budgets"])
        cfg = replace(cfg, **clean)
    return cfg
