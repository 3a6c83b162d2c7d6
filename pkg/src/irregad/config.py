"""Run configuration files and named hyperparameter presets.

A configuration is a YAML (or JSON) mapping with these top-level keys, all
optional and all strictly checked::

    seed: 0
    out: runs/example
    preset: digits-mlstm
    hyperparameters: {p: 8, lr: 0.001, ...}
    data: {train: ..., validation: ..., test: ..., input: ..., format: jsonl, ...}
    preprocess: {relabel: {nominal: [...], anomaly: [...]}, first_difference: true,
                 subsample: {len_min: 55, len_max: 75}, drop_rates: [0.1, 0.7],
                 split: [0.5, 0.25, 0.25], normalize: false}
    synth: {n_sequences: 900, ...}
    eval: {checkpoints: {name: path}, title: ROC}
    online: {n_samples: 100, cadence: 20, candidates: [{lr: 0.01}, {lr: 0.001}]}

Hyperparameters are resolved as defaults, then the preset, then the
``hyperparameters`` block, then command-line overrides.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data import DataError, SynthConfig
from .trainer import HyperparameterError, Hyperparameters

__all__ = ["PRESETS", "ConfigError", "DataSection", "EvalSection", "OnlineSection",
           "PreprocessSection", "RunConfig", "config_hash", "load_config", "resolve_hyperparameters"]


class ConfigError(ValueError):
    pass


def _table(variant: str, p: int, alpha: float, lam: float, period: float) -> dict:
    return {"variant": variant, "B": 32, "p": p, "alpha": alpha, "lam": lam, "tau": 10, "gamma": 0.1,
            "nominal_period": period}


PRESETS: dict[str, dict] = {
    "digits-alstm": _table("A-LSTM", 8, 1000.0, 0.3, 0.1),
    "digits-dlstm": _table("D-LSTM", 8, 1000.0, 0.3, 0.1),
    "digits-mlstm": _table("M-LSTM", 8, 1000.0, 0.4, 0.1),
    "activity-alstm": _table("A-LSTM", 16, 1000.0, 0.3, 0.04),
    "activity-dlstm": _table("D-LSTM", 16, 10000.0, 0.3, 0.04),
    "activity-mlstm": _table("M-LSTM", 32, 1000.0, 0.4, 0.04),
}


def _strict(cls, values: Any, where: str) -> dict:
    if values is None:
        return {}
    if not isinstance(values, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")
    return dict(values)


def _path(value, where: str) -> str | None:
    if value is None:
        return None
    if not isinstance(value, (str, os.PathLike)):
        raise ConfigError(f"{where} must be a path")
    return os.fspath(value)


@dataclass(frozen=True)
class DataSection:
    """Dataset locations.

    ``format`` applies to ``input`` only: ``jsonl``, ``pendigits`` (a
    directory or file of UNIPEN records) or ``activity`` (the
    ``aNN/pN/sNN.txt`` tree). ``channels`` selects activity columns.
    """

    train: str | None = None
    validation: str | None = None
    test: str | None = None
    input: str | None = None
    format: str = "jsonl"
    channels: list[int] | None = None

    def __post_init__(self) -> None:
        for name in ("train", "validation", "test", "input"):
            object.__setattr__(self, name, _path(getattr(self, name), f"data.{name}"))
        if self.format not in ("jsonl", "pendigits", "activity"):
            raise ConfigError("data.format must be jsonl, pendigits or activity")
        if self.channels is not None and not (isinstance(self.channels, list)
                                              and all(isinstance(c, int) and c >= 0 for c in self.channels)):
            raise ConfigError("data.channels must be a list of nonnegative integers")


@dataclass(frozen=True)
class PreprocessSection:
    """Preprocessing recipe applied in this order: relabel, subsample, first difference, normalize, split, drop."""

    relabel: dict | None = None
    first_difference: bool = False
    subsample: dict | None = None
    drop_rates: list[float] = field(default_factory=list)
    split: list[float] | None = None
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.relabel is not None:
            r = _strict_keys(self.relabel, {"nominal", "anomaly"}, "preprocess.relabel")
            for k in ("nominal", "anomaly"):
                if not isinstance(r.get(k, []), list) or not all(isinstance(c, int) for c in r.get(k, [])):
                    raise ConfigError(f"preprocess.relabel.{k} must be a list of integers")
        if self.subsample is not None:
            s = _strict_keys(self.subsample, {"len_min", "len_max"}, "preprocess.subsample")
            lo, hi = s.get("len_min"), s.get("len_max")
            if not (isinstance(lo, int) and isinstance(hi, int) and 2 <= lo <= hi):
                raise ConfigError("preprocess.subsample needs integers 2 <= len_min <= len_max")
        if not isinstance(self.drop_rates, list) or not all(
                isinstance(r, (int, float)) and not isinstance(r, bool) and 0 <= r < 1 for r in self.drop_rates):
            raise ConfigError("preprocess.drop_rates must be a list of numbers in [0, 1)")
        object.__setattr__(self, "drop_rates", [float(r) for r in self.drop_rates])
        if self.split is not None:
            if not (isinstance(self.split, list) and len(self.split) == 3
                    and all(isinstance(f, (int, float)) and f > 0 for f in self.split)
                    and sum(self.split) <= 1 + 1e-12):
                raise ConfigError("preprocess.split must be three positive fractions summing to <= 1")
        for name in ("first_difference", "normalize"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"preprocess.{name} must be true or false")

    @property
    def is_empty(self) -> bool:
        return (self.relabel is None and not self.first_difference and self.subsample is None
                and not self.drop_rates and self.split is None and not self.normalize)


def _strict_keys(values, allowed: set, where: str) -> dict:
    if not isinstance(values, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")
    return dict(values)


@dataclass(frozen=True)
class EvalSection:
    """Checkpoints to compare (name to path) and the plot title."""

    checkpoints: dict[str, str] = field(default_factory=dict)
    title: str = "ROC"

    def __post_init__(self) -> None:
        if not isinstance(self.checkpoints, Mapping):
            raise ConfigError("eval.checkpoints must map names to paths")
        object.__setattr__(self, "checkpoints",
                           {str(k): _path(v, f"eval.checkpoints.{k}") for k, v in self.checkpoints.items()})


@dataclass(frozen=True)
class OnlineSection:
    """Racing window, PSO cadence and candidate overrides (one particle each)."""

    n_samples: int = 100
    cadence: int = 20
    candidates: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not isinstance(self.n_samples, int) or self.n_samples < 1:
            raise ConfigError("online.n_samples must be an integer >= 1")
        if not isinstance(self.cadence, int) or self.cadence < 0:
            raise ConfigError("online.cadence must be an integer >= 0")
        if not isinstance(self.candidates, list) or not all(isinstance(c, Mapping) for c in self.candidates):
            raise ConfigError("online.candidates must be a list of mappings")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str | None = None
    preset: str | None = None
    hyperparameters: dict = field(default_factory=dict)
    data: DataSection = field(default_factory=DataSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    online: OnlineSection = field(default_factory=OnlineSection)

    @classmethod
    def from_dict(cls, values: Mapping | None) -> RunConfig:
        v = _strict(cls, values, "config")
        seed = v.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        preset = v.get("preset")
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        hp = v.get("hyperparameters") or {}
        if not isinstance(hp, Mapping):
            raise ConfigError("hyperparameters must be a mapping")
        try:
            synth = SynthConfig.from_dict(v.get("synth") or {})
        except (DataError, TypeError) as exc:
            raise ConfigError(f"synth: {exc}") from None
        try:
            cfg = cls(
                seed=seed,
                out=_path(v.get("out"), "out"),
                preset=preset,
                hyperparameters=dict(hp),
                data=DataSection(**_strict(DataSection, v.get("data"), "data")),
                preprocess=PreprocessSection(**_strict(PreprocessSection, v.get("preprocess"), "preprocess")),
                synth=synth,
                eval=EvalSection(**_strict(EvalSection, v.get("eval"), "eval")),
                online=OnlineSection(**_strict(OnlineSection, v.get("online"), "online")),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.candidates()  # validate hyperparameters and candidates up front
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "out": self.out, "preset": self.preset,
            "hyperparameters": dict(self.hyperparameters),
            "data": dict(self.data.__dict__),
            "preprocess": dict(self.preprocess.__dict__),
            "synth": self.synth.to_dict(),
            "eval": dict(self.eval.__dict__),
            "online": dict(self.online.__dict__),
        }

    def replace(self, **changes) -> RunConfig:
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)

    def resolve(self, overrides: Mapping | None = None) -> Hyperparameters:
        return resolve_hyperparameters(self.preset, self.hyperparameters, self.seed, overrides)

    def candidates(self, overrides: Mapping | None = None) -> list[Hyperparameters]:
        """One hyperparameter set per online candidate (the base set when none are listed)."""
        base = self.resolve(overrides)
        if not self.online.candidates:
            return [base]
        out = []
        for i, c in enumerate(self.online.candidates):
            try:
                out.append(Hyperparameters.from_dict({**base.to_dict(), **dict(c)}))
            except (HyperparameterError, TypeError) as exc:
                raise ConfigError(f"online.candidates[{i}]: {exc}") from None
        return out


def resolve_hyperparameters(preset: str | None, values: Mapping | None = None, seed: int = 0,
                            overrides: Mapping | None = None) -> Hyperparameters:
    """Merge defaults, preset, explicit values and overrides into validated hyperparameters."""
    merged: dict = {"seed": seed}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    merged.update(values or {})
    merged.update(overrides or {})
    try:
        return Hyperparameters.from_dict(merged)
    except (HyperparameterError, TypeError) as exc:
        raise ConfigError(f"hyperparameters: {exc}") from None


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Read a YAML/JSON configuration file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig.from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        values = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return RunConfig.from_dict(values or {})


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
