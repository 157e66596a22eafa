"""gen -> train -> eval pipeline behind the CLI and the acceptance tests."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..cga.mechanism import CGAMechanism
from ..cga.model import AuctionBatch, CGAConfig, CGAModel
from ..cga.regret import build_misreport_cache
from ..cga.training import (VARIANTS, TrainState, end2end_train, evaluator_train, generator_train,
                            paymentnet_train)
from ..core import AuctionInstance, Outcome
from ..oracle import GSPMechanism, OptimalMechanism, VCGMechanism, WorldCtr, phi_of_bids
from ..worldsim import ClickLog, WorldModel, gen_dataset, iter_instances, world_model
from .config import ConfigError, ExperimentConfig
from .metrics import PsiResult, ic_metric_psi, metric_rpm_ctr

log = logging.getLogger(__name__)

EVALUATOR_CKPT = "evaluator.json"


class MissingCheckpointError(ConfigError):
    """A learned mechanism was requested but its checkpoint is absent."""


# ---------------------------------------------------------------- report types


@dataclass
class MechanismRow:
    mechanism: str
    rpm: float
    ctr: float
    psi: float
    psi_skipped: int
    runtime_ms: float
    seed: int
    config_hash: str
    slot_ctr: list = field(default_factory=list)      # mean true CTR per slot
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Report:
    rows: list
    seed: int
    config_hash: str

    def row(self, mechanism: str) -> MechanismRow:
        for r in self.rows:
            if r.mechanism == mechanism:
                return r
        raise KeyError(mechanism)

    @property
    def mechanisms(self) -> list[str]:
        return [r.mechanism for r in self.rows]


# ---------------------------------------------------------------- data


def model_config(cfg: ExperimentConfig) -> CGAConfig:
    w, m = cfg.world, cfg.model
    return CGAConfig(n=w.n, k=w.k, d_a=w.d_a, d_u=w.d_u, d=m.d, heads=m.heads, lstm_hidden=m.lstm_hidden,
                     pos_prior=m.pos_prior, w_init=m.w_init, pctr_feature=m.pctr_feature, seed=cfg.seed)


def training_data(cfg: ExperimentConfig) -> tuple[list[AuctionInstance], ClickLog]:
    return gen_dataset(cfg.world, cfg.train.num_auctions)


def eval_instances(cfg: ExperimentConfig) -> list[AuctionInstance]:
    return list(iter_instances(cfg.world, cfg.eval.start, cfg.eval.num_instances))


# ---------------------------------------------------------------- training stages


def new_model(cfg: ExperimentConfig) -> CGAModel:
    return CGAModel(model_config(cfg))


def stage_evaluator(cfg: ExperimentConfig, batch: AuctionBatch, clicks: ClickLog,
                    model: Optional[CGAModel] = None) -> tuple[CGAModel, list]:
    model = new_model(cfg) if model is None else model
    t = cfg.train
    curve = evaluator_train(model, batch, clicks, t.evaluator_epochs, t.lr, t.batch, cfg.seed)
    return model, curve


def stage_generator(cfg: ExperimentConfig, name: str, batch: AuctionBatch,
                    evaluator: Optional[CGAModel] = None) -> tuple[CGAModel, list]:
    """Generator training for one variant; end2end variants train Generator + PaymentNet here."""
    variant = VARIANTS[name]
    model = new_model(cfg)
    if variant.use_evaluator:
        if evaluator is None:
            raise MissingCheckpointError(f"variant {name!r} needs a trained Evaluator; run `train evaluator` first")
        model.store.load_snapshot(evaluator.store.snapshot("eval."))
    model.sync_encoder()
    t = cfg.train
    if variant.end2end:
        state = TrainState.fresh(model.cfg.k, t.rho, t.grid, t.L, t.lam0)
        curve = end2end_train(model, batch, state, t.end2end_steps, t.lr, t.end2end_batch, cfg.seed,
                              variant, t.lambda_every)
    else:
        curve = generator_train(model, batch, t.generator_epochs, t.lr, t.generator_batch, cfg.seed, variant)
    return model, curve


def stage_payment(cfg: ExperimentConfig, name: str, batch: AuctionBatch, model: CGAModel) -> tuple[CGAModel, list]:
    variant = VARIANTS[name]
    if variant.end2end:
        return model, []          # PaymentNet was trained jointly in the generator stage
    t = cfg.train
    cache = build_misreport_cache(model, batch, t.grid, variant.use_evaluator, variant.use_virtual_value)
    state = TrainState.fresh(model.cfg.k, t.rho, t.grid, t.L, t.lam0)
    curve = paymentnet_train(model, cache, state, t.payment_epochs, t.lr, t.payment_batch, cfg.seed,
                             t.lambda_every)
    return model, curve


def ckpt_path(ckpt_dir, name: str, stage: str = "") -> Path:
    return Path(ckpt_dir) / (f"{name}.{stage}.json" if stage else f"{name}.json")


def load_model(cfg: ExperimentConfig, path) -> CGAModel:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint {path} not found; run the matching `train` stage first")
    model = new_model(cfg)
    model.store.load(path)
    model.store.freeze()
    return model


def train_mechanisms(cfg: ExperimentConfig, names: Sequence[str], instances, clicks: ClickLog,
                     ckpt_dir=None) -> dict[str, CGAModel]:
    """Train every requested variant, sharing one Evaluator; saves checkpoints if ``ckpt_dir``."""
    batch = AuctionBatch.from_instances(instances)
    models: dict[str, CGAModel] = {}
    evaluator = None
    if any(VARIANTS[n].use_evaluator for n in names):
        t0 = time.perf_counter()
        evaluator, _ = stage_evaluator(cfg, batch, clicks)
        log.info("evaluator trained in %.1fs", time.perf_counter() - t0)
        if ckpt_dir is not None:
            evaluator.store.save(Path(ckpt_dir) / EVALUATOR_CKPT)
    for name in names:
        t0 = time.perf_counter()
        model, _ = stage_generator(cfg, name, batch, evaluator)
        if ckpt_dir is not None:
            model.store.save(ckpt_path(ckpt_dir, name, "gen"))
        model, _ = stage_payment(cfg, name, batch, model)
        model.store.freeze()
        if ckpt_dir is not None:
            model.store.save(ckpt_path(ckpt_dir, name))
        log.info("%s trained in %.1fs", name, time.perf_counter() - t0)
        models[name] = model
    return models


# ---------------------------------------------------------------- evaluation


def build_mechanism(cfg: ExperimentConfig, name: str, world: WorldModel, models: dict):
    truth = WorldCtr(world)
    if name == "optimal":
        return OptimalMechanism(truth, S=cfg.eval.mc_samples, seed=cfg.seed)
    if name == "vcg":
        return VCGMechanism(truth)
    if name == "gsp":
        return GSPMechanism(truth)
    if name not in models:
        raise MissingCheckpointError(f"no trained model for {name!r}")
    return CGAMechanism(models[name], VARIANTS[name], world=world, name=name)


def run_outcomes(mech, instances: Sequence[AuctionInstance]) -> list[Outcome]:
    if isinstance(mech, CGAMechanism):
        bo = mech.run_batch(AuctionBatch.from_instances([i.mechanism_view() for i in instances]))
        return [bo.outcome(b) for b in range(len(instances))]
    return [mech.run(inst) for inst in instances]


def virtual_welfare(instances: Sequence[AuctionInstance], outcomes: Sequence[Outcome]) -> float:
    """Mean Σ φ(v_i) θ_i over winners, φ at the true values, θ as reported on the outcome."""
    tot = 0.0
    for inst, out in zip(instances, outcomes):
        phi = phi_of_bids(inst.with_bids(inst.values)) if inst.values is not None else phi_of_bids(inst)
        tot += float(np.sum(phi[list(out.allocation)] * out.ctrs))
    return tot / max(len(instances), 1)


def evaluate(cfg: ExperimentConfig, models: dict, instances: Optional[list] = None,
             world: Optional[WorldModel] = None) -> Report:
    world = world_model(cfg.world) if world is None else world
    instances = eval_instances(cfg) if instances is None else instances
    n_psi = len(instances) if cfg.eval.psi_instances is None else min(cfg.eval.psi_instances, len(instances))
    h = cfg.hash()
    rows = []
    for name in cfg.mechanisms:
        mech = build_mechanism(cfg, name, world, models)
        t0 = time.perf_counter()
        outcomes = run_outcomes(mech, instances)
        elapsed = time.perf_counter() - t0
        rc = metric_rpm_ctr(outcomes, np.random.default_rng([cfg.seed, 21]))
        psi: PsiResult = ic_metric_psi(mech, instances[:n_psi], cfg.eval.grid, cfg.eval.L,
                                       np.random.default_rng([cfg.seed, 22]))
        slot = np.mean([o.ctrs for o in outcomes], axis=0)
        revenue = float(np.mean([np.sum(o.payments * o.ctrs) for o in outcomes]))
        rows.append(MechanismRow(
            mechanism=name, rpm=rc.rpm, ctr=rc.ctr, psi=psi.psi, psi_skipped=psi.skipped,
            runtime_ms=1000.0 * elapsed / len(instances) if cfg.eval.timing else 0.0,
            seed=cfg.seed, config_hash=h, slot_ctr=[float(c) for c in slot],
            diagnostics={"rpm_expected": rc.rpm_expected, "ctr_expected": rc.ctr_expected,
                         "revenue": revenue, "virtual_welfare": virtual_welfare(instances, outcomes),
                         "psi_terms": psi.terms, "mean_rgt": psi.mean_rgt},
        ))
        log.info("%s rpm=%.2f psi=%.4f", name, rc.rpm, psi.psi)
    return Report(rows, cfg.seed, h)


def load_models(cfg: ExperimentConfig, ckpt_dir) -> dict[str, CGAModel]:
    return {name: load_model(cfg, ckpt_path(ckpt_dir, name)) for name in cfg.learned}


def run_experiment(cfg: ExperimentConfig, ckpt_dir=None, train: bool = True) -> Report:
    """gen -> train (learned mechanisms) -> eval on held-out auctions.

    With ``train=False`` learned mechanisms are loaded from ``ckpt_dir``.
    """
    if ckpt_dir is not None:
        os.makedirs(ckpt_dir, exist_ok=True)
    models: dict = {}
    if cfg.learned:
        if train:
            instances, clicks = training_data(cfg)
            models = train_mechanisms(cfg, cfg.learned, instances, clicks, ckpt_dir)
        else:
            if ckpt_dir is None:
                raise MissingCheckpointError("learned mechanisms need --ckpt when training is skipped")
            models = load_models(cfg, ckpt_dir)
    return evaluate(cfg, models)
