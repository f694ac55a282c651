"""Flat ``key = value`` configuration files with one level of sections.

Example::

    [model]
    preset = desk
    window_len = 512
    noise_sigma = 0.05

    [train]
    epochs = 30
    batch_size = 16
    lr = 0.001

    [household]
    hours = 48
    baseline_w = 100
    noise_std_w = 3

    [appliance:fridge]
    kind = fridge
    load_code = FR
    power_w = 100
    period_s = 600
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, preset
from .synth import ApplianceSpec, SynthConfig, default_household_config
from .train import TrainRunConfig

MODEL_OVERRIDES = {
    "window_len": int,
    "lrelu_alpha": float,
    "noise_sigma": float,
    "bn_momentum": float,
    "bn_epsilon": float,
}


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return cp


def _convert(section: str, key: str, raw: str, typ):
    try:
        if typ is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if typ is tuple:
            return tuple(float(v) for v in raw.split(","))
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def model_config_from(cp: configparser.ConfigParser, preset_name: str | None = None, **overrides) -> ModelConfig:
    sec = cp["model"] if cp.has_section("model") else {}
    name = preset_name or sec.get("preset", "desk")
    kwargs = {}
    for key, typ in MODEL_OVERRIDES.items():
        if key in sec:
            kwargs[key] = _convert("model", key, sec[key], typ)
    unknown = set(sec) - set(MODEL_OVERRIDES) - {"preset"}
    if unknown:
        raise ConfigError(f"[model] unknown keys: {', '.join(sorted(unknown))}")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return preset(name, **kwargs)


def _field_type(annotation):
    # annotations are strings under postponed evaluation
    a = str(annotation)
    if a.startswith("tuple"):
        return tuple
    if a == "bool":
        return bool
    if a == "int":
        return int
    if "float" in a:
        return float
    return str


def _fill_dataclass(cls, section_name: str, section, base=None, skip=()):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in types:
            raise ConfigError(f"[{section_name}] unknown key {key!r}")
        values[key] = _convert(section_name, key, raw, _field_type(types[key]))
    return dataclasses.replace(base, **values) if base is not None else cls(**values)


def train_config_from(cp: configparser.ConfigParser, **overrides) -> TrainRunConfig:
    base = TrainRunConfig()
    if cp.has_section("train"):
        base = _fill_dataclass(TrainRunConfig, "train", cp["train"], base)
    base = dataclasses.replace(base, **{k: v for k, v in overrides.items() if v is not None})
    base.validate()
    return base


def synth_config_from(cp: configparser.ConfigParser, hours: float | None = None):
    """Returns ``(SynthConfig, {appliance name: load code})``."""
    appliance_sections = [s for s in cp.sections() if s.startswith("appliance:")]
    if not cp.has_section("household") and not appliance_sections:
        cfg = default_household_config(hours or 48.0)
        codes = {"fridge": "FR", "kettle": "KT", "washer": "WM"}
        return cfg, codes
    cfg = SynthConfig(appliances=[])
    if cp.has_section("household"):
        sec = dict(cp["household"])
        h = sec.pop("hours", None)
        cfg = _fill_dataclass(SynthConfig, "household", sec, cfg, skip=("appliances",))
        if h is not None:
            cfg.duration_s = _convert("household", "hours", h, float) * 3600.0
    if hours is not None:
        cfg.duration_s = hours * 3600.0
    codes = {}
    for s in appliance_sections:
        name = s.split(":", 1)[1].strip()
        sec = dict(cp[s])
        code = sec.pop("load_code", None)
        spec = _fill_dataclass(ApplianceSpec, s, sec, ApplianceSpec(name, sec.get("kind", "fridge")))
        cfg.appliances.append(spec)
        if code:
            codes[name] = code
    return cfg, codes
