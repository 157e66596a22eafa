"""Oracle self-checks behind ``oracle --check``: monotonicity, revenue = virtual welfare, MC rate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..oracle import (WorldCtr, argmin_allocate, monotonicity_check, myerson_payment_mc, optimal_allocate,
                      optimal_mechanism, phi_of_bids)
from ..worldsim import WorldConfig, instance_at, world_model


@dataclass(frozen=True)
class MonotonicityResult:
    instances: int
    checks: int          # (instance, ad) pairs swept
    violations: int      # adjacent grid pairs where an ad's CTR fell


def check_monotonicity(cfg: WorldConfig = WorldConfig(n=6, k=3), instances: int = 200, grid_points: int = 21,
                       negative_control: bool = False, start: int = 0) -> MonotonicityResult:
    """Sweep every ad's bid over its support with the others fixed and count CTR drops."""
    ctr = WorldCtr(world_model(cfg))
    allocate = argmin_allocate if negative_control else optimal_allocate
    checks = violations = 0
    for idx in range(start, start + instances):
        inst = instance_at(cfg, idx)
        for i in range(inst.n):
            grid = np.linspace(0.0, inst.dists[i].upper, grid_points)
            rep = monotonicity_check(inst, ctr, i, grid, allocate=allocate)
            checks += 1
            violations += len(rep.violations)
    return MonotonicityResult(instances, checks, violations)


@dataclass(frozen=True)
class RevenueIdentityResult:
    profiles: int
    revenue: float            # mean sum p_i theta_i
    virtual_welfare: float    # mean sum phi(v_i) theta_i over winners
    rel_gap: float


def check_revenue_identity(cfg: WorldConfig = WorldConfig(n=5, k=2), profiles: int = 10_000, S: int = 2000,
                   seed: int = 0, start: int = 0) -> RevenueIdentityResult:
    """Expected revenue of the optimal mechanism vs expected virtual welfare, truthful bids."""
    ctr = WorldCtr(world_model(cfg))
    rev = np.empty(profiles)
    vw = np.empty(profiles)
    for j in range(profiles):
        inst = instance_at(cfg, start + j)
        res = optimal_mechanism(inst, ctr, S=S, seed=seed)
        out = res.outcome
        rev[j] = float(np.sum(out.payments * out.ctrs))
        vw[j] = float(np.sum(phi_of_bids(inst)[list(out.allocation)] * out.ctrs))
    r, w = float(rev.mean()), float(vw.mean())
    return RevenueIdentityResult(profiles, r, w, abs(r - w) / r)


@dataclass(frozen=True)
class ConvergenceResult:
    sample_sizes: tuple
    std: tuple
    slope: float


def check_mc_convergence(cfg: WorldConfig = WorldConfig(n=6, k=3), sample_sizes=(100, 1000, 10_000),
                         reps: int = 200, instance: int = 0, slot: int = 0) -> ConvergenceResult:
    """Std of the MC payment over independent seeds at each S; slope of log std against log S."""
    ctr = WorldCtr(world_model(cfg))
    inst = instance_at(cfg, instance)
    ad = int(optimal_allocate(inst, ctr, phi_of_bids(inst)).outcome.allocation[slot])
    stds = []
    for S in sample_sizes:
        p = [myerson_payment_mc(inst, ctr, None, ad, S, np.random.default_rng([r, S])) for r in range(reps)]
        stds.append(float(np.std(p, ddof=1)))
    slope = float(np.polyfit(np.log(sample_sizes), np.log(stds), 1)[0])
    return ConvergenceResult(tuple(sample_sizes), tuple(stds), slope)
