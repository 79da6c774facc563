"""Run configuration: JSON in, validated dataclass out."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .checkpoint import config_hash
from .errors import ConfigError
from .interpolant import InterpolantKind
from .loss import PARAMETERIZATIONS, VELOCITY, XPRED


@dataclass
class DatasetSpec:
    name: str = "gaussians8"
    n: int = 20000
    seed: int = 1234
    path: str | None = None
    normalize: bool = True


@dataclass
class RunConfig:
    """Everything needed to reproduce a training run.

    ``beta`` is a positive number or ``"inf"`` (independent coupling, no
    encoder). Defaults are the desk-scale settings used by the test suite.
    """

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    interpolant: dict = field(default_factory=lambda: {"kind": "linear", "a": 19.9, "b": 0.1})
    parameterization: str = VELOCITY
    beta: float | str = "inf"
    generator_hidden: list = field(default_factory=lambda: [128, 128, 128])
    encoder_hidden: list = field(default_factory=lambda: [32, 32])
    n_freqs: int = 4
    activation: str = "silu"
    lr: float = 2e-3
    warmup_steps: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    iterations: int = 6000
    t_min: float = 1e-5
    t_max: float = 1.0
    ema_decay: float = 0.999
    ema_start: int = 300
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 100

    @property
    def independent(self) -> bool:
        return isinstance(self.beta, float) and math.isinf(self.beta)

    @property
    def interp(self) -> InterpolantKind:
        return InterpolantKind.from_json(self.interpolant)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["beta"] = "inf" if self.independent else self.beta
        return d

    def hash(self) -> str:
        return config_hash(self.to_json())

    def validate(self) -> "RunConfig":
        errs = []

        def need(cond, name, msg):
            if not cond:
                errs.append(f"{name}: {msg}")

        if isinstance(self.beta, str):
            if self.beta.lower() not in ("inf", "infinity"):
                errs.append("beta: must be a positive number or \"inf\"")
            else:
                self.beta = math.inf
        elif isinstance(self.beta, (int, float)) and not isinstance(self.beta, bool):
            self.beta = float(self.beta)
            need(self.beta > 0, "beta", "must be positive")
        else:
            errs.append("beta: must be a positive number or \"inf\"")
        need(self.parameterization in PARAMETERIZATIONS, "parameterization", f"one of {PARAMETERIZATIONS}")
        try:
            self.interp
        except ConfigError as exc:
            errs.append(f"interpolant: {exc}")
        need(all(isinstance(h, int) and h > 0 for h in self.generator_hidden) and self.generator_hidden,
             "generator_hidden", "non-empty list of positive integers")
        need(all(isinstance(h, int) and h > 0 for h in self.encoder_hidden),
             "encoder_hidden", "list of positive integers")
        need(isinstance(self.n_freqs, int) and self.n_freqs >= 1, "n_freqs", "integer >= 1")
        need(self.activation in ("silu", "relu", "tanh"), "activation", "silu, relu or tanh")
        need(self.lr > 0, "lr", "must be positive")
        need(isinstance(self.warmup_steps, int) and self.warmup_steps >= 0, "warmup_steps", "integer >= 0")
        need(0 <= self.adam_beta1 < 1, "adam_beta1", "in [0, 1)")
        need(0 <= self.adam_beta2 < 1, "adam_beta2", "in [0, 1)")
        need(self.adam_eps > 0, "adam_eps", "must be positive")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size", "integer >= 1")
        need(isinstance(self.iterations, int) and self.iterations >= 0, "iterations", "integer >= 0")
        need(0 <= self.t_min < self.t_max <= 1, "t_min/t_max", "need 0 <= t_min < t_max <= 1")
        if self.parameterization == XPRED or self.interp.kind == "vp":
            need(self.t_min > 0, "t_min", "must be > 0 for x-prediction or the vp interpolant")
        need(0 <= self.ema_decay < 1, "ema_decay", "in [0, 1)")
        need(isinstance(self.ema_start, int) and self.ema_start >= 0, "ema_start", "integer >= 0")
        need(isinstance(self.seed, int), "seed", "integer")
        need(isinstance(self.checkpoint_every, int) and self.checkpoint_every >= 0, "checkpoint_every", "integer >= 0")
        need(isinstance(self.log_every, int) and self.log_every >= 1, "log_every", "integer >= 1")
        ds = self.dataset
        need(ds.path is not None or ds.name in ("gaussians8", "moons", "checkerboard", "spiral", "point"),
             "dataset.name", "unknown synthetic dataset")
        need(isinstance(ds.n, int) and ds.n >= 1, "dataset.n", "integer >= 1")
        if errs:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errs))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"invalid config: unknown field(s) {unknown}")
        ds = d.pop("dataset", {})
        if isinstance(ds, str):
            ds = {"name": ds}
        ds_known = {f.name for f in dataclasses.fields(DatasetSpec)}
        if set(ds) - ds_known:
            raise ConfigError(f"invalid config: unknown dataset field(s) {sorted(set(ds) - ds_known)}")
        if isinstance(d.get("interpolant"), str):
            d["interpolant"] = {"kind": d["interpolant"], "a": 19.9, "b": 0.1}
        try:
            cfg = cls(dataset=DatasetSpec(**ds), **d)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)
