"""Command line: gen / train / eval / oracle / run.

Exit codes: 0 success, 2 configuration error (including missing
checkpoints), 3 enumeration cap or other resource error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..cga.model import AuctionBatch
from ..cga.training import VARIANTS
from ..oracle import EnumerationCapError, GSPMechanism, OptimalMechanism, VCGMechanism, WorldCtr
from ..worldsim import gen_dataset, read_dataset, world_model, write_dataset
from . import checks
from .config import MECHANISMS, ConfigError, ExperimentConfig, from_dict, load_config
from .experiment import (EVALUATOR_CKPT, ckpt_path, eval_instances, evaluate, load_model, load_models,
                         run_experiment, stage_evaluator, stage_generator, stage_payment)
from .report import emit_report, emit_slot_ctr

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3

log = logging.getLogger("cgalab")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_gen(args) -> int:
    cfg = _config(args)
    if args.split == "train":
        instances, clicks = gen_dataset(cfg.world, cfg.train.num_auctions)
    else:
        instances, clicks = gen_dataset(cfg.world, cfg.eval.num_instances, start=cfg.eval.start)
    write_dataset(args.out, instances, clicks)
    print(f"wrote {len(instances)} auctions to {args.out}")
    return EXIT_OK


def _load_data(args, cfg):
    if not args.data:
        raise ConfigError("--data is required (produce it with `gen`)")
    if not os.path.exists(args.data):
        raise ConfigError(f"dataset {args.data} not found; run `gen` first")
    instances, clicks = read_dataset(args.data)
    for inst in instances:
        if inst.n != cfg.world.n or inst.k != cfg.world.k:
            raise ConfigError(f"dataset auctions have n={inst.n}, k={inst.k} but the config says "
                              f"n={cfg.world.n}, k={cfg.world.k}")
    return instances, clicks


def cmd_train(args) -> int:
    cfg = _config(args)
    instances, clicks = _load_data(args, cfg)
    batch = AuctionBatch.from_instances(instances)
    ckpt = Path(args.ckpt)
    ckpt.mkdir(parents=True, exist_ok=True)
    names = [args.variant] if args.variant else (cfg.learned or ["cga"])
    stages = ["evaluator", "generator", "payment"] if args.stage == "all" else [args.stage]
    if "evaluator" in stages:
        model, curve = stage_evaluator(cfg, batch, clicks)
        model.store.save(ckpt / EVALUATOR_CKPT)
        print(f"evaluator: final loss {curve[-1]:.6f} -> {ckpt / EVALUATOR_CKPT}")
    for name in names:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; choose from {list(VARIANTS)}")
        if "generator" in stages:
            ev = load_model(cfg, ckpt / EVALUATOR_CKPT) if VARIANTS[name].use_evaluator else None
            model, _ = stage_generator(cfg, name, batch, ev)
            model.store.save(ckpt_path(ckpt, name, "gen"))
            print(f"{name}: generator -> {ckpt_path(ckpt, name, 'gen')}")
        if "payment" in stages:
            model = load_model(cfg, ckpt_path(ckpt, name, "gen"))
            model, _ = stage_payment(cfg, name, batch, model)
            model.store.save(ckpt_path(ckpt, name))
            print(f"{name}: payment -> {ckpt_path(ckpt, name)}")
    return EXIT_OK


def _mechanism_list(args, cfg) -> ExperimentConfig:
    if not args.mechanisms:
        return cfg
    d = cfg.to_dict()
    d["mechanisms"] = [m for m in args.mechanisms.split(",") if m]
    return from_dict(d)


def _write_reports(report, args) -> None:
    emit_report(report, args.report, "json" if str(args.report).endswith(".json") else "csv")
    if args.json:
        emit_report(report, args.json, "json")
    if args.slot_ctr:
        emit_slot_ctr(report, args.slot_ctr)
    for r in report.rows:
        print(f"{r.mechanism:>14s}  rpm={r.rpm:9.3f}  ctr={r.ctr:.4f}  psi={r.psi:.4f}  "
              f"skipped={r.psi_skipped}")


def cmd_eval(args) -> int:
    cfg = _mechanism_list(args, _config(args))
    models = {}
    if cfg.learned:
        if not args.ckpt:
            raise ConfigError(f"learned mechanisms {cfg.learned} need --ckpt")
        models = load_models(cfg, args.ckpt)
    instances = read_dataset(args.data)[0] if args.data else eval_instances(cfg)
    report = evaluate(cfg, models, instances)
    _write_reports(report, args)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _mechanism_list(args, _config(args))
    report = run_experiment(cfg, ckpt_dir=args.ckpt, train=not args.no_train)
    _write_reports(report, args)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _config(args)
    if args.check == "monotonicity":
        wc = cfg.world.replace(n=6, k=3) if args.config is None else cfg.world
        res = checks.check_monotonicity(wc, args.instances or 200, args.grid)
        neg = checks.check_monotonicity(wc, min(args.instances or 200, 20), args.grid, negative_control=True)
        print(json.dumps({"instances": res.instances, "checks": res.checks, "violations": res.violations,
                          "argmin_control_violations": neg.violations}))
        return EXIT_OK
    if args.check == "theorem2":
        wc = cfg.world.replace(n=5, k=2) if args.config is None else cfg.world
        res = checks.check_revenue_identity(wc, args.instances or 10_000, args.mc_samples or 2000, cfg.seed)
        print(json.dumps(res.__dict__))
        return EXIT_OK
    if args.check == "mc-convergence":
        wc = cfg.world.replace(n=6, k=3) if args.config is None else cfg.world
        res = checks.check_mc_convergence(wc)
        print(json.dumps({"S": list(res.sample_sizes), "std": list(res.std), "slope": res.slope}))
        return EXIT_OK
    # --mechanism: revenue of one oracle mechanism over the eval instances
    world = world_model(cfg.world)
    truth = WorldCtr(world)
    mech = {"optimal": OptimalMechanism(truth, S=args.mc_samples or cfg.eval.mc_samples, seed=cfg.seed),
            "vcg": VCGMechanism(truth), "gsp": GSPMechanism(truth)}[args.mechanism]
    instances = eval_instances(cfg)[: args.instances or None]
    rev = [float(np.sum(o.payments * o.ctrs)) for o in (mech.run(i) for i in instances)]
    print(json.dumps({"mechanism": args.mechanism, "instances": len(rev), "revenue": float(np.mean(rev))}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgalab", description="Auction generation and evaluation pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed everywhere")

    g = sub.add_parser("gen", help="generate an auction dataset with click logs")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--split", choices=("train", "eval"), default="train")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train Evaluator, Generator or PaymentNet")
    t.add_argument("stage", choices=("evaluator", "generator", "payment", "all"))
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--ckpt", required=True, help="checkpoint directory")
    t.add_argument("--variant", help=f"one of {list(VARIANTS)} (default: learned mechanisms in the config)")
    t.set_defaults(fn=cmd_train)

    for name, fn, help_ in (("eval", cmd_eval, "evaluate mechanisms on held-out auctions"),
                            ("run", cmd_run, "gen + train + eval in one go")):
        e = sub.add_parser(name, help=help_)
        common(e)
        e.add_argument("--mechanisms", help=f"comma list from {list(MECHANISMS)}")
        e.add_argument("--report", required=True, help="report path (.csv or .json)")
        e.add_argument("--json", help="also write the JSON report here")
        e.add_argument("--slot-ctr", help="write per-slot mean CTR CSV here")
        e.add_argument("--ckpt", help="checkpoint directory")
        if name == "eval":
            e.add_argument("--data", help="held-out dataset (default: generated from the config)")
        else:
            e.add_argument("--no-train", action="store_true", help="load checkpoints instead of training")
        e.set_defaults(fn=fn)

    o = sub.add_parser("oracle", help="oracle self-checks and oracle mechanism runs")
    common(o)
    grp = o.add_mutually_exclusive_group(required=True)
    grp.add_argument("--check", choices=("monotonicity", "theorem2", "mc-convergence"))
    grp.add_argument("--mechanism", choices=("optimal", "vcg", "gsp"))
    o.add_argument("--instances", type=int)
    o.add_argument("--grid", type=int, default=21)
    o.add_argument("--mc-samples", type=int)
    o.set_defaults(fn=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnumerationCapError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
