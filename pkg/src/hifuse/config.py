"""Run configuration: defaults < config file < HIFUSE_* environment < CLI flags."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from hifuse.embedding import NetworkSpec, TrainConfig
from hifuse.errors import ConfigError
from hifuse.features import MelConfig
from hifuse.fusion import FusionConfig
from hifuse.pipeline import LabelConfig
from hifuse.synth import SynthConfig

ENV_PREFIX = "HIFUSE_"

DEFAULTS: dict = {
    "seed": 0,
    "method": "a2ds",
    "align_window": [100, 150],
    "labels": {"t_healthy": 50, "faulty_tail": 50, "t_faulty": None},
    "mel": {"n_mels": 64, "window_s": 0.1, "hop_s": 0.1, "sample_rate_hz": None},
    "network": {"k": 16, "hidden": [32, 32]},
    "train": {
        "lr": 5e-4,
        "epochs": 1000,
        "batch_size": 128,
        "mu": 0.1,
        "nu": 10.0,
        "lambda_div": 1e-3,
        "eps_dist": 1e-6,
        "eps_jitter": 1e-6,
    },
    "fusion": {"beta": 0.05, "iters": 1000, "tol": 1e-9, "tau": 30, "isotonic": True, "projection": "exact"},
    "synth": {
        "T": 300,
        "F": 20,
        "n_informative": 5,
        "phase_breaks": None,
        "noise_sigma": 0.1,
        "identity_distortion": False,
        "n_units": 3,
        "lifetime_jitter": 0.1,
    },
    "paths": {"train": [], "test": None, "model": None, "out": None},
}


def _coerce(value: Any, default: Any, key: str) -> Any:
    if value is None:
        return value
    if default is None:
        return yaml.safe_load(value) if isinstance(value, str) else value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = yaml.safe_load(value)
            if not isinstance(value, (list, tuple)):
                raise ValueError(value)
            return list(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot use {value!r} as {type(default).__name__}") from None
    return value


def _merge(base: dict, over: Mapping, prefix: str = "") -> None:
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, Mapping):
                raise ConfigError(f"config key {key!r} must be a mapping")
            _merge(base[k], v, key + ".")
        else:
            base[k] = _coerce(v, DEFAULTS_FLAT.get(key, base[k]), key)


def _flatten(d: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


DEFAULTS_FLAT = _flatten(DEFAULTS)


def _nest(dotted: str, value: Any) -> dict:
    parts = dotted.split(".")
    out: dict = {}
    cur = out
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


class RunConfig:
    """Fully resolved settings for one run; unknown keys are rejected."""

    def __init__(self, data: Optional[Mapping] = None):
        self.data = copy.deepcopy(DEFAULTS)
        if data:
            _merge(self.data, data)

    # --- layering ---------------------------------------------------------

    @classmethod
    def load(cls, path=None, environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            cfg.update(read_config_file(path))
        cfg.apply_env(os.environ if environ is None else environ)
        return cfg

    def update(self, data: Mapping) -> None:
        _merge(self.data, data)

    def set(self, dotted: str, value: Any) -> None:
        if dotted not in DEFAULTS_FLAT:
            raise ConfigError(f"unknown config key {dotted!r}")
        _merge(self.data, _nest(dotted, value))

    def apply_env(self, environ: Mapping[str, str]) -> None:
        """``HIFUSE_TRAIN__LR=1e-3`` sets ``train.lr``; ``__`` separates levels."""
        for name in sorted(environ):
            if not name.startswith(ENV_PREFIX):
                continue
            dotted = name[len(ENV_PREFIX) :].lower().replace("__", ".")
            matches = [k for k in DEFAULTS_FLAT if k.lower() == dotted]
            if not matches:
                raise ConfigError(f"environment variable {name} maps to unknown key {dotted!r}")
            raw = environ[name]
            value = None if raw.strip().lower() in ("null", "none", "") else raw
            self.set(matches[0], value)

    def get(self, dotted: str) -> Any:
        cur: Any = self.data
        for p in dotted.split("."):
            cur = cur[p]
        return cur

    # --- typed views ------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.data["train"])

    def network_spec(self, F: int) -> NetworkSpec:
        n = self.data["network"]
        if n["k"] < 1:
            raise ConfigError("network.k must be >= 1")
        return NetworkSpec.default(F, K=n["k"], hidden=n["hidden"])

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(**self.data["fusion"])

    def label_config(self) -> LabelConfig:
        return LabelConfig(**self.data["labels"])

    def mel_config(self, sample_rate_hz: Optional[int] = None) -> MelConfig:
        m = dict(self.data["mel"])
        sr = m.pop("sample_rate_hz")
        if sample_rate_hz is not None:
            if sr is not None and sr != sample_rate_hz:
                raise ConfigError(f"mel.sample_rate_hz={sr} disagrees with the signal files ({sample_rate_hz})")
            sr = sample_rate_hz
        if sr is None:
            raise ConfigError("mel.sample_rate_hz is not set")
        return MelConfig(sample_rate_hz=int(sr), **m)

    def synth_config(self) -> SynthConfig:
        s = dict(self.data["synth"])
        s.pop("n_units")
        s.pop("lifetime_jitter")
        if s["phase_breaks"] is not None:
            s["phase_breaks"] = tuple(s["phase_breaks"])
        return SynthConfig(seed=self.seed, **s)

    @property
    def align_window(self) -> tuple[int, int]:
        lo, hi = self.data["align_window"]
        return int(lo), int(hi)

    # --- output -----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def write(self, directory) -> Path:
        path = Path(directory) / "run_config.json"
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: cannot parse config: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data
