"""RPM / CTR from simulated clicks and the Ψ incentive-compatibility metric."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..cga.mechanism import CGAMechanism
from ..cga.model import AuctionBatch
from ..cga.regret import (DEFAULT_GRID, build_misreport_cache, check_grid, empirical_regret,
                          redraw_profile, regret_from_rates)
from ..core import AuctionInstance, Outcome
from ..worldsim import sample_clicks

UTILITY_GUARD = 1e-8


@dataclass(frozen=True)
class RpmCtr:
    rpm: float
    ctr: float
    rpm_expected: float     # closed form 1000 * sum(p * theta) / impressions
    ctr_expected: float     # closed form sum(theta) / impressions
    impressions: int


def metric_rpm_ctr(outcomes: Sequence[Outcome], rng: np.random.Generator) -> RpmCtr:
    """One simulated user per auction; each of the k slots is an impression.

    ``outcome.ctrs`` must already be the true world CTR of the shown slate.
    """
    if not outcomes:
        return RpmCtr(0.0, 0.0, 0.0, 0.0, 0)
    theta = np.concatenate([np.asarray(o.ctrs, dtype=np.float64) for o in outcomes])
    pay = np.concatenate([np.asarray(o.payments, dtype=np.float64) for o in outcomes])
    clicks = sample_clicks(theta, rng)
    m = theta.size
    return RpmCtr(rpm=float(1000.0 * np.sum(clicks * pay) / m), ctr=float(np.sum(clicks) / m),
                  rpm_expected=float(1000.0 * np.sum(pay * theta) / m), ctr_expected=float(np.sum(theta) / m),
                  impressions=m)


@dataclass(frozen=True)
class PsiResult:
    psi: float
    skipped: int          # winner terms with truthful utility below the guard
    terms: int            # winner terms that entered the mean
    mean_rgt: float       # mean per-profile summed regret (absolute, not relative)


def psi_from_regret(rgt: np.ndarray, u0: np.ndarray, guard: float = UTILITY_GUARD) -> PsiResult:
    """Ψ = mean over profiles of Σ_winners rgt / u, skipping terms with u < guard.

    ``rgt`` and ``u0`` are (profiles, k).
    """
    rgt = np.asarray(rgt, dtype=np.float64)
    u0 = np.asarray(u0, dtype=np.float64)
    if rgt.size == 0:
        return PsiResult(0.0, 0, 0, 0.0)
    ok = u0 >= guard
    ratio = np.where(ok, rgt / np.where(ok, u0, 1.0), 0.0)
    return PsiResult(psi=float(ratio.sum(axis=1).mean()), skipped=int((~ok).sum()), terms=int(ok.sum()),
                     mean_rgt=float(rgt.sum(axis=1).mean()))


def ic_metric_psi(mechanism, instances: Sequence[AuctionInstance], grid: Sequence[float] = DEFAULT_GRID,
                  L: int = 1, rng: Optional[np.random.Generator] = None) -> PsiResult:
    """Ψ for any mechanism handle via per-instance empirical regret.

    With ``L > 1`` each instance contributes ``L`` redrawn value profiles.
    """
    g = check_grid(grid)
    if isinstance(mechanism, CGAMechanism):
        return cga_psi(mechanism, instances, g, L, rng)
    rows_r, rows_u = [], []
    for inst in instances:
        res = empirical_regret(inst, mechanism, g, L, rng)
        rows_r.append(res.rgt)
        rows_u.append(res.utility)
    if not rows_r:
        return PsiResult(0.0, 0, 0, 0.0)
    return psi_from_regret(np.concatenate(rows_r), np.concatenate(rows_u))


def profiles(instances: Sequence[AuctionInstance], L: int, rng: Optional[np.random.Generator]):
    """The value profiles regret is measured on, in the same order as ``empirical_regret``."""
    if L == 1:
        return list(instances)
    if rng is None:
        raise ValueError("L > 1 needs an rng for the valuation redraws")
    return [redraw_profile(inst, rng) for inst in instances for _ in range(L)]


def cga_psi(mech: CGAMechanism, instances: Sequence[AuctionInstance], grid: Sequence[float] = DEFAULT_GRID,
            L: int = 1, rng: Optional[np.random.Generator] = None, chunk: int = 128) -> PsiResult:
    """Batched Ψ for CGA: one cached misreport pass, utilities under the true CTR if a world is attached.

    Same numbers as :func:`ic_metric_psi` with the generic per-instance loop.
    """
    profs = profiles(instances, L, rng)
    if not profs:
        return PsiResult(0.0, 0, 0, 0.0)
    batch = AuctionBatch.from_instances(profs)
    v = mech.variant
    cache = build_misreport_cache(mech.model, batch, grid, v.use_evaluator, v.use_virtual_value,
                                  world=mech.world, chunk=chunk)
    rates = mech.model.payment.rate_from_features(cache.feats).data
    rgt, u0, _ = regret_from_rates(cache, rates, cache.theta_true)
    return psi_from_regret(rgt, u0)
