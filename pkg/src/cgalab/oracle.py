"""Exact mechanisms by enumerating every k-permutation of the candidates.

Ground truth for the learned mechanism: the virtual-welfare-maximising
(Myerson) auction with Monte Carlo payments, VCG with permutation-level
externalities, GSP, and an empirical monotonicity checker.

Argmax ties always go to the lexicographically smallest allocation; the
enumeration order is lexicographic, so "first maximum wins" implements it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .core import Allocation, AuctionInstance, Outcome
from .valuation import bid_virtual_value
from .worldsim import WorldModel

MAX_ALLOCATIONS = 10 ** 7
CHUNK = 1 << 15
# table entries (allocations x slots) above which MC payments stream instead
TABLE_LIMIT = 4_000_000


class EnumerationCapError(RuntimeError):
    pass


def num_allocations(n: int, k: int) -> int:
    return math.perm(n, k)


def _check_cap(n: int, k: int, cap: int) -> None:
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    count = num_allocations(n, k)
    if count > cap:
        raise EnumerationCapError(
            f"{count} allocations for n={n}, k={k} exceeds the cap of {cap}; "
            f"reduce n or k (or raise the cap)")


def enumerate_allocations(n: int, k: int, cap: int = MAX_ALLOCATIONS) -> Iterator[Allocation]:
    _check_cap(n, k, cap)
    for perm in itertools.permutations(range(n), k):
        yield Allocation(perm)


def allocation_chunks(n: int, k: int, chunk: int = CHUNK, cap: int = MAX_ALLOCATIONS) -> Iterator[np.ndarray]:
    """Lexicographic k-permutations as (<=chunk, k) int arrays."""
    _check_cap(n, k, cap)
    it = itertools.permutations(range(n), k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.int64).reshape(len(block), k)


def all_allocations(n: int, k: int, cap: int = MAX_ALLOCATIONS) -> np.ndarray:
    return np.concatenate(list(allocation_chunks(n, k, cap=cap)), axis=0)


# ---------------------------------------------------------------- CTR oracles


class CtrOracle:
    """Maps (instance, allocations (m, k)) to CTRs (m, k) in [0, 1].

    ``bid_dependent`` tells callers whether CTRs can change when only bids
    change; when False, per-instance tables are reused across bid queries.
    """

    bid_dependent = False

    def __call__(self, inst: AuctionInstance, allocs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class WorldCtr(CtrOracle):
    def __init__(self, world: WorldModel):
        self.world = world

    def __call__(self, inst, allocs):
        return self.world.ctr_table(inst, allocs)


class ConstantCtr(CtrOracle):
    """Same CTR for every ad in every slot (the classic single-parameter setting)."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, inst, allocs):
        return np.full(np.shape(allocs), self.value)


class FunctionCtr(CtrOracle):
    def __init__(self, fn: Callable[[AuctionInstance, np.ndarray], np.ndarray], bid_dependent: bool = True):
        self.fn = fn
        self.bid_dependent = bid_dependent

    def __call__(self, inst, allocs):
        return self.fn(inst, allocs)


@dataclass(frozen=True, eq=False)
class MechanismResult:
    outcome: Outcome
    welfare: float          # objective value of the chosen allocation (virtual or plain)
    n_scored: int


@dataclass(frozen=True, eq=False)
class AllocationTable:
    """All allocations of one instance with their CTRs (bid-independent oracles only)."""

    allocs: np.ndarray
    ctrs: np.ndarray

    @classmethod
    def build(cls, inst: AuctionInstance, ctr: CtrOracle, cap: int = MAX_ALLOCATIONS) -> "AllocationTable":
        allocs = all_allocations(inst.n, inst.k, cap)
        return cls(allocs, ctr(inst, allocs))

    def scores(self, weights: np.ndarray) -> np.ndarray:
        """Objective per allocation; ``weights`` is (n,) or (S, n)."""
        return (weights[..., self.allocs] * self.ctrs).sum(axis=-1)

    def ad_ctr(self, i: int) -> np.ndarray:
        """CTR of ad i under each allocation (0 where it is absent)."""
        return np.where(self.allocs == i, self.ctrs, 0.0).sum(axis=1)


def phi_of_bids(inst: AuctionInstance) -> np.ndarray:
    return np.array([bid_virtual_value(d, b) for d, b in zip(inst.dists, inst.bids)])


def default_phi_fn(inst: AuctionInstance) -> Callable[[int, np.ndarray], np.ndarray]:
    return lambda i, t: bid_virtual_value(inst.dists[i], t)


def _argmax_stream(inst: AuctionInstance, ctr: CtrOracle, weights: np.ndarray,
                   cap: int, sign: float = 1.0) -> tuple[np.ndarray, np.ndarray, float, int]:
    best_val = -np.inf
    best_alloc = best_ctr = None
    scored = 0
    for allocs in allocation_chunks(inst.n, inst.k, cap=cap):
        ctrs = ctr(inst, allocs)
        s = sign * (weights[allocs] * ctrs).sum(axis=1)
        j = int(np.argmax(s))
        if s[j] > best_val:           # strict: earlier chunks win ties
            best_val, best_alloc, best_ctr = s[j], allocs[j], ctrs[j]
        scored += len(allocs)
    return best_alloc, best_ctr, sign * best_val, scored


def optimal_allocate(inst: AuctionInstance, ctr: CtrOracle, phi: Sequence[float],
                     cap: int = MAX_ALLOCATIONS, table: Optional[AllocationTable] = None) -> MechanismResult:
    """Allocation maximising sum phi[A_s] * theta_s(A); payments left at zero."""
    phi = np.asarray(phi, dtype=np.float64)
    if table is not None:
        s = table.scores(phi)
        j = int(np.argmax(s))
        alloc, ctrs, val, scored = table.allocs[j], table.ctrs[j], float(s[j]), len(s)
    else:
        alloc, ctrs, val, scored = _argmax_stream(inst, ctr, phi, cap)
    out = Outcome(Allocation(alloc), np.zeros(inst.k), ctrs)
    return MechanismResult(out, float(val), scored)


def argmin_allocate(inst: AuctionInstance, ctr: CtrOracle, phi: Sequence[float],
                    cap: int = MAX_ALLOCATIONS, table: Optional[AllocationTable] = None) -> MechanismResult:
    """Deliberately wrong allocator (minimises virtual welfare); a negative control."""
    alloc, ctrs, val, scored = _argmax_stream(inst, ctr, np.asarray(phi, dtype=np.float64), cap, sign=-1.0)
    return MechanismResult(Outcome(Allocation(alloc), np.zeros(inst.k), ctrs), float(val), scored)


def _ad_ctr_under_bids(inst: AuctionInstance, ctr: CtrOracle, phi_fn, i: int, bids_i: np.ndarray,
                       table: Optional[AllocationTable], cap: int) -> np.ndarray:
    """Theta_i when ad i alone rebids each value in ``bids_i`` (others fixed)."""
    phi = phi_of_bids(inst) if phi_fn is None else np.array(
        [phi_fn(j, inst.bids[j]) for j in range(inst.n)], dtype=np.float64)
    phi_i = np.asarray(phi_fn(i, bids_i) if phi_fn is not None
                       else bid_virtual_value(inst.dists[i], bids_i), dtype=np.float64)
    if table is not None and table.allocs.size <= TABLE_LIMIT:
        theta_i = table.ad_ctr(i)
        out = np.empty(len(bids_i))
        step = max(1, TABLE_LIMIT // max(1, table.allocs.size))
        for lo in range(0, len(bids_i), step):
            w = np.repeat(phi[None, :], len(bids_i[lo:lo + step]), axis=0)
            w[:, i] = phi_i[lo:lo + step]
            j = np.argmax(table.scores(w), axis=1)
            out[lo:lo + step] = theta_i[j]
        return out
    out = np.empty(len(bids_i))
    for s, (b, ph) in enumerate(zip(bids_i, phi_i)):
        inst_b = inst.with_bid(i, float(b))
        w = phi.copy()
        w[i] = ph
        res = optimal_allocate(inst_b, ctr, w, cap)
        out[s] = res.outcome.ad_terms(i)[1]
    return out


def _table_for(inst, ctr, cap, table):
    if table is not None or ctr.bid_dependent:
        return table
    if num_allocations(inst.n, inst.k) * inst.k > TABLE_LIMIT:
        return None
    return AllocationTable.build(inst, ctr, cap)


def myerson_payment_mc(inst: AuctionInstance, ctr: CtrOracle, phi_fn, i: int, S: int,
                       rng: np.random.Generator, cap: int = MAX_ALLOCATIONS,
                       table: Optional[AllocationTable] = None,
                       theta_b: Optional[float] = None) -> float:
    """p_i = b_i - b_i * mean_s Theta_i(t_s, b_-i) / Theta_i(b), t_s ~ U[0, b_i].

    Returns 0 when ad i receives zero CTR at its bid.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    table = _table_for(inst, ctr, cap, table)
    b = float(inst.bids[i])
    if theta_b is None:
        theta_b = float(_ad_ctr_under_bids(inst, ctr, phi_fn, i, np.array([b]), table, cap)[0])
    if theta_b <= 0.0:
        return 0.0
    t = b * rng.random(S)
    theta_t = _ad_ctr_under_bids(inst, ctr, phi_fn, i, t, table, cap)
    # in [0, b] by monotonicity; the clip only absorbs round-off
    return min(max(b - b * float(theta_t.mean()) / theta_b, 0.0), b)


def myerson_payment_quadrature(inst: AuctionInstance, ctr: CtrOracle, phi_fn, i: int,
                               grid: int = 512, tol: float = 1e-12,
                               cap: int = MAX_ALLOCATIONS) -> float:
    """Deterministic payment: integrates the step function Theta_i(t) exactly.

    Theta_i(t) is piecewise constant in t; jumps are bracketed on a uniform
    grid and located by bisection. Independent of the MC estimator, used to
    check it.
    """
    table = _table_for(inst, ctr, cap, None)
    b = float(inst.bids[i])
    f = lambda ts: _ad_ctr_under_bids(inst, ctr, phi_fn, i, np.asarray(ts, dtype=np.float64), table, cap)  # noqa: E731
    theta_b = float(f([b])[0])
    if theta_b <= 0.0 or b == 0.0:
        return 0.0
    ts = np.linspace(0.0, b, grid + 1)
    vals = f(ts)
    integral = 0.0
    for lo, hi, v_lo, v_hi in zip(ts[:-1], ts[1:], vals[:-1], vals[1:]):
        if v_lo == v_hi:
            integral += v_lo * (hi - lo)
            continue
        # locate the (assumed single) jump in (lo, hi]
        a, c = lo, hi
        while c - a > tol:
            m = 0.5 * (a + c)
            if f([m])[0] == v_lo:
                a = m
            else:
                c = m
        integral += v_lo * (a - lo) + v_hi * (hi - a)
    return b - integral / theta_b


def mc_stream(seed: int, uid: int, ad: int) -> np.random.Generator:
    """MC draws keyed by (seed, auction, ad) so misreports share random numbers."""
    return np.random.default_rng([seed, uid, ad])


def optimal_mechanism(inst: AuctionInstance, ctr: CtrOracle, S: int = 200, seed: int = 0,
                      phi_fn=None, cap: int = MAX_ALLOCATIONS, eval_ctr: Optional[CtrOracle] = None,
                      only_ad: Optional[int] = None) -> MechanismResult:
    """Virtual-welfare argmax plus Monte Carlo Myerson payments for every winner.

    ``only_ad`` restricts payment computation to one ad (others are left at 0),
    which is all a regret query needs.
    """
    inst = inst.mechanism_view()
    table = _table_for(inst, ctr, cap, None)
    phi = phi_of_bids(inst) if phi_fn is None else np.array([phi_fn(j, inst.bids[j]) for j in range(inst.n)])
    res = optimal_allocate(inst, ctr, phi, cap, table)
    alloc = res.outcome.allocation
    payments = np.zeros(inst.k)
    for s, ad in enumerate(alloc):
        if only_ad is not None and ad != only_ad:
            continue
        payments[s] = myerson_payment_mc(inst, ctr, phi_fn, ad, S, mc_stream(seed, inst.uid, ad),
                                         cap, table, theta_b=float(res.outcome.ctrs[s]))
    ctrs = res.outcome.ctrs if eval_ctr is None else eval_ctr(inst, np.asarray([alloc.slots]))[0]
    return MechanismResult(Outcome(alloc, payments, ctrs), res.welfare, res.n_scored)


def vcg_mechanism(inst: AuctionInstance, ctr: CtrOracle, cap: int = MAX_ALLOCATIONS,
                  eval_ctr: Optional[CtrOracle] = None) -> MechanismResult:
    """Welfare argmax; winner pays (W(b_-i) - (W(b) - b_i theta_i)) / theta_i per click."""
    inst = inst.mechanism_view()
    if inst.n - 1 < inst.k:
        raise ValueError(f"VCG needs n-1 >= k to price winners (n={inst.n}, k={inst.k})")
    bids = inst.bids
    best_val = -np.inf
    best_alloc = best_ctr = None
    best_without = np.full(inst.n, -np.inf)
    scored = 0
    for allocs in allocation_chunks(inst.n, inst.k, cap=cap):
        ctrs = ctr(inst, allocs)
        w = (bids[allocs] * ctrs).sum(axis=1)
        j = int(np.argmax(w))
        if w[j] > best_val:
            best_val, best_alloc, best_ctr = w[j], allocs[j], ctrs[j]
        present = np.zeros((len(allocs), inst.n), dtype=bool)
        present[np.arange(len(allocs))[:, None], allocs] = True
        masked = np.where(present, -np.inf, w[:, None])
        best_without = np.maximum(best_without, masked.max(axis=0))
        scored += len(allocs)
    payments = np.zeros(inst.k)
    for s, ad in enumerate(best_alloc):
        theta = best_ctr[s]
        if theta <= 0:
            continue
        others = best_val - bids[ad] * theta
        p = (best_without[ad] - others) / theta
        # negative only under positive externalities; payments are kept nonnegative
        payments[s] = min(max(p, 0.0), bids[ad])
    alloc = Allocation(best_alloc)
    ctrs = best_ctr if eval_ctr is None else eval_ctr(inst, np.asarray([alloc.slots]))[0]
    return MechanismResult(Outcome(alloc, payments, ctrs), float(best_val), scored)


def gsp_mechanism(inst: AuctionInstance, pctr: Sequence[float], eval_ctr: CtrOracle) -> MechanismResult:
    """Rank by bid * pctr; slot j pays next score / own pctr per click, capped at own bid."""
    inst = inst.mechanism_view()
    pctr = np.asarray(pctr, dtype=np.float64)
    score = inst.bids * pctr
    order = np.lexsort((np.arange(inst.n), -score))
    winners = order[: inst.k]
    payments = np.zeros(inst.k)
    for j, ad in enumerate(winners):
        if j + 1 >= inst.n or pctr[ad] <= 0:
            continue
        nxt = order[j + 1]
        payments[j] = min(score[nxt] / pctr[ad], inst.bids[ad])
    alloc = Allocation(winners)
    ctrs = eval_ctr(inst, np.asarray([alloc.slots]))[0]
    return MechanismResult(Outcome(alloc, payments, ctrs), float(score[winners].sum()), inst.n)


@dataclass
class MonotonicityReport:
    ok: bool
    violations: list[tuple[float, float, float, float]]   # (b_lo, b_hi, theta_lo, theta_hi)
    thetas: np.ndarray


def monotonicity_check(inst: AuctionInstance, ctr: CtrOracle, i: int, grid: Sequence[float],
                       allocate=optimal_allocate, tol: float = 1e-9, phi_fn=None,
                       cap: int = MAX_ALLOCATIONS) -> MonotonicityReport:
    """Recompute the allocation for each bid of ad i on an ascending grid and
    report every adjacent pair where its CTR drops by more than ``tol``."""
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be ascending")
    table = _table_for(inst, ctr, cap, None)
    thetas = np.empty(len(grid))
    for g, b in enumerate(grid):
        inst_b = inst.with_bid(i, float(b))
        phi = phi_of_bids(inst_b) if phi_fn is None else np.array(
            [phi_fn(j, inst_b.bids[j]) for j in range(inst.n)])
        tab = table if allocate is optimal_allocate else None
        res = allocate(inst_b, ctr, phi, cap, tab)
        thetas[g] = res.outcome.ad_terms(i)[1]
    violations = [(float(grid[g]), float(grid[g + 1]), float(thetas[g]), float(thetas[g + 1]))
                  for g in range(len(grid) - 1) if thetas[g + 1] < thetas[g] - tol]
    return MonotonicityReport(not violations, violations, thetas)


# ---------------------------------------------------------------- mechanism handles


class Mechanism:
    """A mechanism as a bid -> outcome map, queried by metrics and regret code."""

    name = "mechanism"

    def run(self, inst: AuctionInstance) -> Outcome:
        raise NotImplementedError

    def ad_terms(self, inst: AuctionInstance, ad: int) -> tuple[float, float]:
        """(payment, ctr) of one ad; subclasses may skip work for other winners."""
        return self.run(inst).ad_terms(ad)


class OptimalMechanism(Mechanism):
    name = "optimal"

    def __init__(self, ctr: CtrOracle, S: int = 200, seed: int = 0, eval_ctr: Optional[CtrOracle] = None):
        self.ctr, self.S, self.seed, self.eval_ctr = ctr, S, seed, eval_ctr

    def run(self, inst):
        return optimal_mechanism(inst, self.ctr, self.S, self.seed, eval_ctr=self.eval_ctr).outcome

    def ad_terms(self, inst, ad):
        out = optimal_mechanism(inst, self.ctr, self.S, self.seed, eval_ctr=self.eval_ctr, only_ad=ad).outcome
        return out.ad_terms(ad)


class VCGMechanism(Mechanism):
    name = "vcg"

    def __init__(self, ctr: CtrOracle, eval_ctr: Optional[CtrOracle] = None):
        self.ctr, self.eval_ctr = ctr, eval_ctr

    def run(self, inst):
        return vcg_mechanism(inst, self.ctr, eval_ctr=self.eval_ctr).outcome


class GSPMechanism(Mechanism):
    name = "gsp"

    def __init__(self, eval_ctr: CtrOracle):
        self.eval_ctr = eval_ctr

    def run(self, inst):
        if inst.pctr is None:
            raise ValueError("GSP needs point-wise pctr on the instance")
        return gsp_mechanism(inst, inst.pctr, self.eval_ctr).outcome


class PayYourBidMechanism(Mechanism):
    """Virtual-welfare allocation charging each winner its bid (a non-IC control)."""

    name = "pay-your-bid"

    def __init__(self, ctr: CtrOracle):
        self.ctr = ctr

    def run(self, inst):
        inst = inst.mechanism_view()
        res = optimal_allocate(inst, self.ctr, phi_of_bids(inst))
        alloc = res.outcome.allocation
        return Outcome(alloc, inst.bids[list(alloc)], res.outcome.ctrs)
