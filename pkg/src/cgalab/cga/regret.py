"""Ex-post regret over a multiplicative misreport grid.

Two paths: :func:`empirical_regret` works with any mechanism handle one
instance at a time; :class:`MisreportCache` runs the frozen CGA
Generator/Evaluator once for every (auction, winner, grid factor) and keeps
the PaymentNet inputs, so regret under a changing PaymentNet is a cheap MLP
pass.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..core import AuctionInstance, utility
from ..valuation import sample
from ..worldsim import WorldModel
from .model import AuctionBatch, CGAModel, gather_rows, self_exclusion_bids

DEFAULT_GRID = tuple(round(0.2 * j, 10) for j in range(1, 11))


def check_grid(grid: Sequence[float]) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size == 0 or not np.any(g == 1.0):
        raise ValueError(f"misreport grid must contain the truthful factor 1.0, got {list(g)}")
    if np.any(g < 0):
        raise ValueError("misreport factors must be nonnegative")
    return g


def redraw_profile(inst: AuctionInstance, rng: np.random.Generator) -> AuctionInstance:
    """Fresh values from each ad's distribution, bid truthfully; features kept."""
    values = np.array([sample(d, rng) for d in inst.dists])
    return replace(inst, values=values, bids=values.copy())


@dataclass
class RegretResult:
    rgt: np.ndarray         # (L, k) per-winner regret, slot order
    utility: np.ndarray     # (L, k) truthful utility of each winner
    winners: np.ndarray     # (L, k) ad indices

    @property
    def mean_rgt(self) -> np.ndarray:
        return self.rgt.mean(axis=0)


def empirical_regret(inst: AuctionInstance, mechanism, grid: Sequence[float] = DEFAULT_GRID,
                     L: int = 1, rng: Optional[np.random.Generator] = None) -> RegretResult:
    """rgt_i = max_a u_i(v_i; a * b_i, b_-i) - u_i(v_i; b) for every winner i.

    With ``L > 1`` the values are redrawn ``L`` times (truthful bids) and each
    redraw is reported as its own row.
    """
    g = check_grid(grid)
    if L > 1 and rng is None:
        raise ValueError("L > 1 needs an rng for the valuation redraws")
    profiles = [inst] if L == 1 else [redraw_profile(inst, rng) for _ in range(L)]
    rows_r, rows_u, rows_w = [], [], []
    for prof in profiles:
        if prof.values is None:
            raise ValueError("regret needs private values on the instance")
        out = mechanism.run(prof)
        rgt = np.zeros(len(out.allocation))
        util = np.zeros(len(out.allocation))
        for s, ad in enumerate(out.allocation):
            v = float(prof.values[ad])
            u0 = utility(v, float(out.payments[s]), float(out.ctrs[s]))
            best = 0.0
            for a in g:
                if a == 1.0:
                    continue
                p, th = mechanism.ad_terms(prof.with_bid(ad, a * float(prof.bids[ad])), ad)
                best = max(best, utility(v, p, th) - u0)
            rgt[s], util[s] = best, u0
        rows_r.append(rgt)
        rows_u.append(util)
        rows_w.append(np.array(out.allocation.slots))
    return RegretResult(np.array(rows_r), np.array(rows_u), np.array(rows_w))


@dataclass
class MisreportCache:
    """Frozen-G-E runs for each (auction, truthful winner slot, grid factor).

    Index ``[..., g1]`` is the truthful run. ``feats`` rows are PaymentNet
    inputs for the misreporting ad at the slot it obtained (zeros if it lost).
    """

    grid: np.ndarray
    g1: int
    allocs: np.ndarray        # (N, k) truthful allocation
    feats: np.ndarray         # (N, k, G, d + k)
    won: np.ndarray           # (N, k, G) bool
    bid: np.ndarray           # (N, k, G) the misreported bid
    theta: np.ndarray         # (N, k, G) mechanism-side CTR (Evaluator or alpha)
    values: np.ndarray        # (N, k)
    theta_true: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.allocs.shape[0]

    def take(self, idx) -> "MisreportCache":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return MisreportCache(self.grid, self.g1, self.allocs[idx], self.feats[idx], self.won[idx],
                              self.bid[idx], self.theta[idx], self.values[idx], pick(self.theta_true))


def mechanism_ctr(model: CGAModel, X, U, bids, pctr, allocs, use_evaluator: bool) -> np.ndarray:
    if use_evaluator:
        return model.evaluator.ctr(X, U, bids, pctr, allocs)
    return model.evaluator.alpha(pctr, allocs)


def misreport_rows(model: CGAModel, batch: AuctionBatch, allocs: np.ndarray, grid: np.ndarray,
                   use_virtual_value: bool = True):
    """Expanded inputs where winner ``s`` of auction ``b`` bids ``grid[g] * b``.

    Returns (X, U, bids, phi, pctr, ad) flattened to B * k * G rows.
    """
    B, n = batch.bids.shape
    k, G = allocs.shape[1], len(grid)
    rows = np.arange(B)[:, None]
    win_bid = batch.bids[rows, allocs]                               # (B, k)
    bids = np.broadcast_to(batch.bids[:, None, None, :], (B, k, G, n)).copy()
    bi, si, gi = np.meshgrid(np.arange(B), np.arange(k), np.arange(G), indexing="ij")
    bids[bi, si, gi, allocs[bi, si]] = win_bid[:, :, None] * grid[None, None, :]
    rep = lambda a: np.broadcast_to(a[:, None, None], (B, k, G) + a.shape[1:]).reshape((B * k * G,) + a.shape[1:])  # noqa: E731
    bids = bids.reshape(B * k * G, n)
    phi = rep(batch.phi_slope) * bids + rep(batch.phi_icept) if use_virtual_value else bids.copy()
    ad = np.broadcast_to(allocs[:, :, None], (B, k, G)).reshape(-1)
    return rep(batch.X), rep(batch.U), bids, phi, rep(batch.pctr), ad


def build_misreport_cache(model: CGAModel, batch: AuctionBatch, grid: Sequence[float] = DEFAULT_GRID,
                          use_evaluator: bool = True, use_virtual_value: bool = True,
                          world: Optional[WorldModel] = None, chunk: int = 128) -> MisreportCache:
    if batch.values is None:
        raise ValueError("misreport cache needs private values")
    grid = check_grid(grid)
    g1 = int(np.flatnonzero(grid == 1.0)[0])
    parts = []
    for lo in range(0, len(batch), chunk):
        sub = batch.take(np.arange(lo, min(lo + chunk, len(batch))))
        parts.append(_cache_chunk(model, sub, grid, use_evaluator, use_virtual_value, world))
    cat = lambda i: None if parts[0][i] is None else np.concatenate([p[i] for p in parts])  # noqa: E731
    allocs, feats, won, bid, theta, theta_true = (cat(i) for i in range(6))
    values = np.take_along_axis(batch.values, allocs, axis=1)
    return MisreportCache(grid, g1, allocs, feats, won, bid, theta, values, theta_true)


def _cache_chunk(model, sub, grid, use_evaluator, use_vv, world):
    gen = model.generator
    B = len(sub)
    k, G = model.cfg.k, len(grid)
    allocs = gen(sub.X, sub.U, sub.bids, sub.phi(use_virtual_value=use_vv), pctr=sub.pctr).allocs
    X, U, bids, phi, pctr, ad = misreport_rows(model, sub, allocs, grid, use_vv)
    trace = gen(X, U, bids, phi, pctr=pctr)
    A = trace.allocs
    hit = A == ad[:, None]
    won = hit.any(axis=1)
    slot = np.argmax(hit, axis=1)
    R = len(A)
    r = np.arange(R)
    theta = mechanism_ctr(model, X, U, bids, pctr, A, use_evaluator)
    H_A = gather_rows(trace.H, A).data[r, slot]                        # (R, d)
    win_bids = np.take_along_axis(bids, A, axis=1)
    bminus = self_exclusion_bids(win_bids)[r, slot]                    # (R, k-1)
    ev = (trace.Z * theta)[r, slot][:, None]
    feats = np.concatenate([H_A, bminus, ev], axis=1) * won[:, None]
    th = theta[r, slot] * won
    th_true = None
    if world is not None:
        th_true = world.ctr_batch(X, U, A)[r, slot] * won
    shape = (B, k, G)
    own_bid = bids[r, ad]
    return (allocs, feats.reshape(shape + (-1,)), won.reshape(shape), own_bid.reshape(shape),
            th.reshape(shape), None if th_true is None else th_true.reshape(shape))


def regret_from_rates(cache: MisreportCache, rates: np.ndarray, theta: Optional[np.ndarray] = None):
    """(rgt, truthful utility, truthful payment) per winner for given payment rates (N, k, G)."""
    th = cache.theta if theta is None else theta
    p = rates * cache.bid
    u = cache.won * (cache.values[..., None] - p) * th
    u0 = u[..., cache.g1]
    rgt = np.max(u - u0[..., None], axis=-1)
    return rgt, u0, p[..., cache.g1]
