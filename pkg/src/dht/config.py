"""Run configuration: a flat JSON object with dotted keys.

Example::

    {"kernel.kind": "gaussian", "ic.criterion": "AICC", "encoder.d": 8,
     "tokens.q": 16, "train.epochs": 10, "seed": 0}

Unknown keys are rejected; missing keys take the defaults below.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .encoder import EncoderConfig, TrainHyper
from .hierarchy import MAX_LEVELS
from .kernels import KernelSpec
from .selection import ICConfig
from .vectorize import DEFAULT_TOL

THREADS_ENV = "DHT_THREADS"

DEFAULTS = {
    "kernel.kind": "gaussian",
    "kernel.sigma": 1.0,
    "ic.criterion": "AICC",
    "ic.gn_shape": 2.0,
    "ic.df_scale": 1.0,
    "ic.on_raw_pixels": False,
    "encoder.d": 8,
    "encoder.arch": "conv",
    "encoder.conv_kernel": 3,
    "encoder.relu": False,
    "hierarchy.max_levels": MAX_LEVELS,
    "tokens.q": 16,
    "tokens.p": 24,
    "train.lr": 1e-4,
    "train.weight_decay": 1e-2,
    "train.epochs": 10,
    "train.batch": 1,
    "vectorize.tol": DEFAULT_TOL,
    "vectorize.coarse_level": None,
    "seed": 0,
    "threads": None,
    "io.checkpoint": None,
    "io.out": None,
}

_TYPES = {
    "kernel.kind": str,
    "kernel.sigma": float,
    "ic.criterion": str,
    "ic.gn_shape": float,
    "ic.df_scale": float,
    "ic.on_raw_pixels": bool,
    "encoder.d": int,
    "encoder.arch": str,
    "encoder.conv_kernel": int,
    "encoder.relu": bool,
    "hierarchy.max_levels": int,
    "tokens.q": int,
    "tokens.p": int,
    "train.lr": float,
    "train.weight_decay": float,
    "train.epochs": int,
    "train.batch": int,
    "vectorize.tol": float,
    "vectorize.coarse_level": int,
    "seed": int,
    "threads": int,
    "io.checkpoint": str,
    "io.out": str,
}


class ConfigError(ValueError):
    pass


def _coerce(key, val):
    if val is None:
        if DEFAULTS[key] is None:
            return None
        raise ConfigError(f"{key} may not be null")
    typ = _TYPES[key]
    if typ is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{key} must be true or false")
        return val
    if typ is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key} must be an integer")
        return val
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(val)
    if not isinstance(val, str):
        raise ConfigError(f"{key} must be a string")
    return val


@dataclass(frozen=True)
class RunConfig:
    kernel: KernelSpec = field(default_factory=KernelSpec)
    ic: ICConfig = field(default_factory=ICConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    max_levels: int = MAX_LEVELS
    q: int = 16
    p: int = 24
    tol: float = DEFAULT_TOL
    coarse_level: int | None = None
    seed: int = 0
    threads: int | None = None
    checkpoint: str | None = None
    out: str | None = None

    @classmethod
    def from_flat(cls, values: dict | None = None) -> "RunConfig":
        values = dict(values or {})
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        v = dict(DEFAULTS)
        v.update({k: _coerce(k, val) for k, val in values.items()})
        for k in ("tokens.q", "tokens.p", "hierarchy.max_levels", "train.batch"):
            if v[k] < 1:
                raise ConfigError(f"{k} must be >= 1")
        if v["train.epochs"] < 0:
            raise ConfigError("train.epochs must be >= 0")
        if v["vectorize.tol"] < 0:
            raise ConfigError("vectorize.tol must be >= 0")
        if v["threads"] is not None and v["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        if not v["train.lr"] >= 0:
            raise ConfigError("train.lr must be >= 0")
        try:
            return cls(
                kernel=KernelSpec(v["kernel.kind"], v["kernel.sigma"]),
                ic=ICConfig(v["ic.criterion"], v["ic.gn_shape"], v["ic.df_scale"], v["ic.on_raw_pixels"]),
                encoder=EncoderConfig(
                    v["encoder.d"], v["encoder.arch"], v["encoder.conv_kernel"], v["encoder.relu"], v["seed"]
                ),
                train=TrainHyper(
                    lr=v["train.lr"],
                    weight_decay=v["train.weight_decay"],
                    epochs=v["train.epochs"],
                    batch=v["train.batch"],
                ),
                max_levels=v["hierarchy.max_levels"],
                q=v["tokens.q"],
                p=v["tokens.p"],
                tol=v["vectorize.tol"],
                coarse_level=v["vectorize.coarse_level"],
                seed=v["seed"],
                threads=v["threads"],
                checkpoint=v["io.checkpoint"],
                out=v["io.out"],
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_flat(self) -> dict:
        return {
            "kernel.kind": self.kernel.kind,
            "kernel.sigma": self.kernel.sigma,
            "ic.criterion": self.ic.criterion,
            "ic.gn_shape": self.ic.gn_shape,
            "ic.df_scale": self.ic.df_scale,
            "ic.on_raw_pixels": self.ic.on_raw_pixels,
            "encoder.d": self.encoder.d,
            "encoder.arch": self.encoder.arch,
            "encoder.conv_kernel": self.encoder.conv_kernel,
            "encoder.relu": self.encoder.relu,
            "hierarchy.max_levels": self.max_levels,
            "tokens.q": self.q,
            "tokens.p": self.p,
            "train.lr": self.train.lr,
            "train.weight_decay": self.train.weight_decay,
            "train.epochs": self.train.epochs,
            "train.batch": self.train.batch,
            "vectorize.tol": self.tol,
            "vectorize.coarse_level": self.coarse_level,
            "seed": self.seed,
            "threads": self.threads,
            "io.checkpoint": self.checkpoint,
            "io.out": self.out,
        }

    def override(self, **flat) -> "RunConfig":
        """Copy with dotted-key overrides (``None`` values are ignored)."""
        merged = self.to_flat()
        merged.update({k.replace("__", "."): v for k, v in flat.items() if v is not None})
        return RunConfig.from_flat(merged)

    def resolved_threads(self) -> int:
        """Worker threads: the config value (default 1), capped by ``DHT_THREADS``."""
        env = os.environ.get(THREADS_ENV)
        cap = None
        if env:
            try:
                cap = int(env)
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
            if cap < 1:
                raise ConfigError(f"{THREADS_ENV} must be >= 1")
        if self.threads is None:
            return cap or 1
        return min(self.threads, cap) if cap else self.threads


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{os.fspath(path)}: invalid JSON ({exc})") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{os.fspath(path)}: config must be a JSON object")
    return RunConfig.from_flat(values)


__all__ = ["RunConfig", "ConfigError", "load_config", "DEFAULTS", "THREADS_ENV"]
