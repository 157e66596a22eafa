"""Experiment configuration: one JSON document, unknown keys rejected."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from ..cga.regret import DEFAULT_GRID, check_grid
from ..cga.training import VARIANTS, TrainSettings
from ..worldsim import WorldConfig

BASELINES = ("optimal", "vcg", "gsp")
MECHANISMS = BASELINES + tuple(VARIANTS)
ABLATION = tuple(VARIANTS)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class ModelSettings:
    d: int = 32
    heads: int = 4
    lstm_hidden: int = 32
    pos_prior: float = 0.8
    w_init: float = 0.0
    pctr_feature: bool = True


@dataclass(frozen=True)
class TrainConfig:
    num_auctions: int = 5000
    lr: float = 1e-3
    batch: int = 512
    evaluator_epochs: int = 20
    generator_epochs: int = 20
    generator_batch: int = 128
    payment_epochs: int = 100
    payment_batch: int = 128
    end2end_steps: int = 300
    end2end_batch: int = 32
    rho: float = 1.0
    lam0: float = 5.0
    lambda_every: int = 5
    grid: tuple = DEFAULT_GRID
    L: int = 1

    def settings(self) -> TrainSettings:
        return TrainSettings(lr=self.lr, batch=self.batch, evaluator_epochs=self.evaluator_epochs,
                             generator_epochs=self.generator_epochs, generator_batch=self.generator_batch,
                             payment_epochs=self.payment_epochs, payment_batch=self.payment_batch,
                             end2end_steps=self.end2end_steps, end2end_batch=self.end2end_batch,
                             rho=self.rho, lam0=self.lam0, lambda_every=self.lambda_every,
                             grid=tuple(self.grid), L=self.L)


@dataclass(frozen=True)
class EvalConfig:
    num_instances: int = 1000
    start: int = 1_000_000        # held-out auctions come from this index of the instance stream
    L: int = 5
    psi_instances: Optional[int] = None   # None: all eval instances
    mc_samples: int = 200
    grid: tuple = DEFAULT_GRID
    timing: bool = True           # False writes runtime_ms = 0 for byte-comparable reports
    slot_ctr: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    mechanisms: tuple = ("optimal", "vcg", "gsp", "cga")
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def __post_init__(self):
        bad = [m for m in self.mechanisms if m not in MECHANISMS]
        if bad:
            raise ConfigError(f"unknown mechanism(s) {bad}; choose from {list(MECHANISMS)}")
        if len(set(self.mechanisms)) != len(self.mechanisms):
            raise ConfigError("duplicate mechanism names")
        for name, grid in (("train.grid", self.train.grid), ("eval.grid", self.eval.grid)):
            try:
                check_grid(grid)
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.train.rho <= 0:
            raise ConfigError("train.rho must be > 0")
        if self.train.num_auctions < 1 or self.eval.num_instances < 1:
            raise ConfigError("train.num_auctions and eval.num_instances must be >= 1")
        if self.eval.L < 1 or self.train.L < 1:
            raise ConfigError("L must be >= 1")
        if self.model.d % self.model.heads:
            raise ConfigError(f"model.d={self.model.d} must be divisible by model.heads={self.model.heads}")

    @property
    def learned(self) -> list[str]:
        return [m for m in self.mechanisms if m in VARIANTS]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the seed everywhere: world generation, initialization, training, evaluation."""
        d = self.to_dict()
        d["seed"] = int(seed)
        d["world"]["seed"] = int(seed)
        return from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mechanisms"] = list(self.mechanisms)
        d["train"]["grid"] = list(self.train.grid)
        d["eval"]["grid"] = list(self.eval.grid)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _section(cls, obj, where: str):
    if obj is None:
        return cls()
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}; allowed: {sorted(known)}")
    vals = dict(obj)
    for key in ("grid",):
        if key in vals:
            vals[key] = tuple(float(a) for a in vals[key])
    try:
        return cls(**vals)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(obj) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {unknown}; allowed: {sorted(top)}")
    mechs = obj.get("mechanisms", ExperimentConfig.mechanisms)
    if isinstance(mechs, str):
        mechs = [m for m in mechs.split(",") if m]
    try:
        seed = int(obj.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    return ExperimentConfig(
        world=_section(WorldConfig, obj.get("world"), "world"),
        mechanisms=tuple(mechs),
        model=_section(ModelSettings, obj.get("model"), "model"),
        train=_section(TrainConfig, obj.get("train"), "train"),
        eval=_section(EvalConfig, obj.get("eval"), "eval"),
        seed=seed,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(obj)
