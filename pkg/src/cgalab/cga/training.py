"""The three training procedures plus the end-to-end ablation.

Schedule: Evaluator by BCE on the click log, freeze; Generator by REINFORCE
against Evaluator rewards, freeze; PaymentNet by the augmented Lagrangian
over cached misreport runs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..neural import Graph, adam_step, backward
from ..neural import ops as T
from ..worldsim import ClickLog
from .model import THETA_EPS, AuctionBatch, CGAModel, gather_rows, self_exclusion_bids
from .regret import (DEFAULT_GRID, MisreportCache, build_misreport_cache, check_grid,
                     mechanism_ctr, misreport_rows)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    """Ablation switches; the defaults are full CGA."""

    use_evaluator: bool = True
    end2end: bool = False
    use_self_reward: bool = True
    use_external_reward: bool = True
    use_virtual_value: bool = True


VARIANTS = {
    "cga": Variant(),
    "cga-theta": Variant(use_evaluator=False),
    "cga-end2end": Variant(end2end=True),
    "cga-rself": Variant(use_self_reward=False),
    "cga-rexternal": Variant(use_external_reward=False),
    "cga-phi": Variant(use_virtual_value=False),
}


@dataclass
class TrainState:
    lam: np.ndarray
    rho: float = 1.0
    grid: tuple = DEFAULT_GRID
    L: int = 1
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        check_grid(self.grid)

    @classmethod
    def fresh(cls, k: int, rho: float = 1.0, grid=DEFAULT_GRID, L: int = 1,
              lam0: float = 0.0) -> "TrainState":
        return cls(np.full(k, float(lam0)), rho, tuple(grid), L)

    def update(self, mean_rgt: np.ndarray) -> None:
        """lambda_i += rho * mean slot-i regret."""
        self.lam = self.lam + self.rho * np.asarray(mean_rgt, dtype=np.float64)


def _batches(N: int, size: int, rng: np.random.Generator):
    order = rng.permutation(N)
    for lo in range(0, N, size):
        yield order[lo:lo + size]


# ---------------------------------------------------------------- Evaluator


def bce(theta, y) -> float:
    """Mean over auctions of the summed per-slot binary cross-entropy."""
    th = np.clip(np.asarray(theta, dtype=np.float64), THETA_EPS, 1.0 - THETA_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(-(y * np.log(th) + (1 - y) * np.log(1 - th)).sum(axis=-1).mean())


def _bce_tensor(theta, y):
    th = T.clamp(theta, THETA_EPS, 1.0 - THETA_EPS)
    ll = T.add(T.mul(T.log(th), y), T.mul(T.log(T.sub(1.0, th)), 1.0 - y))
    return T.mul(T.sum(ll), -1.0 / y.shape[0])


def evaluator_logits(model: CGAModel, batch: AuctionBatch, allocs: np.ndarray):
    """Evaluator output for logged allocations (traced when called under a Graph)."""
    ev = model.evaluator
    enc = ev.encoder(batch.X, batch.U, batch.bids, batch.pctr)
    return ev.forward(gather_rows(enc.H, allocs), enc.h_u, ev.alpha(batch.pctr, allocs))


def evaluator_train(model: CGAModel, batch: AuctionBatch, clicks: ClickLog, epochs: int = 10,
                    lr: float = 1e-3, batch_size: int = 512, seed: int = 0) -> list[float]:
    """Minimise the click BCE on logged exposures; returns the mean loss per epoch."""
    if len(clicks) == 0:
        raise ValueError("empty click log")
    if len(clicks) != len(batch):
        raise ValueError("click log and auction batch differ in length")
    store = model.store
    store.freeze()
    store.unfreeze("eval.")
    store.reset_optimizer()
    rng = np.random.default_rng([seed, 11])
    y_all = clicks.clicks.astype(np.float64)
    curve = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(len(batch), batch_size, rng):
            with Graph():
                out = evaluator_logits(model, batch.take(idx), clicks.allocs[idx])
                loss = _bce_tensor(out.theta, y_all[idx])
                backward(loss)
            adam_step(store, lr)
            total += float(loss.data) * len(idx)
        curve.append(total / len(batch))
        log.debug("evaluator epoch %d loss %.5f", len(curve), curve[-1])
    store.freeze("eval.")
    return curve


def evaluator_logloss(model: CGAModel, batch: AuctionBatch, clicks: ClickLog) -> float:
    theta = evaluator_logits(model, batch, clicks.allocs).theta.data
    return bce(theta, clicks.clicks)


def pointwise_logloss(clicks: ClickLog) -> float:
    """Baseline that predicts the logged point-wise alpha."""
    return bce(clicks.pctr, clicks.clicks)


# ---------------------------------------------------------------- rewards


@dataclass
class Rewards:
    total: np.ndarray      # (B, k)
    self_: np.ndarray
    external: np.ndarray
    vw: np.ndarray         # (B,) virtual welfare of A
    vw_minus: np.ndarray   # (B, k) virtual welfare of A_-i


def drop_slot_index(k: int) -> np.ndarray:
    """(k, k-1): row i lists slots of A with slot i removed, later slots shifted up."""
    return np.array([[j for j in range(k) if j != i] for i in range(k)], dtype=np.int64).reshape(k, k - 1)


def compute_rewards(model: CGAModel, batch: AuctionBatch, allocs: np.ndarray, phi: np.ndarray,
                    variant: Variant = Variant()) -> Rewards:
    """r_i = VW(A) - VW(A_-i) split into self and external parts (numpy, frozen Evaluator)."""
    B, k = allocs.shape
    theta = mechanism_ctr(model, batch.X, batch.U, batch.bids, batch.pctr, allocs, variant.use_evaluator)
    phi_A = np.take_along_axis(phi, allocs, axis=1)
    r_self = phi_A * theta
    vw = r_self.sum(axis=1)
    if k == 1:
        vw_minus = np.zeros((B, 1))
    else:
        minus = allocs[:, drop_slot_index(k)].reshape(B * k, k - 1)
        rep = lambda a: np.repeat(a, k, axis=0)  # noqa: E731
        th_minus = mechanism_ctr(model, rep(batch.X), rep(batch.U), rep(batch.bids), rep(batch.pctr),
                                 minus, variant.use_evaluator)
        phi_minus = np.take_along_axis(rep(phi), minus, axis=1)
        vw_minus = (phi_minus * th_minus).sum(axis=1).reshape(B, k)
    r_ext = (vw[:, None] - r_self) - vw_minus
    total = np.zeros((B, k))
    if variant.use_self_reward:
        total = total + r_self
    if variant.use_external_reward:
        total = total + r_ext
    return Rewards(total, r_self, r_ext, vw, vw_minus)


# ---------------------------------------------------------------- Generator


def generator_loss(trace, rewards: np.ndarray):
    """L_G = -(1/B) sum_s sum_i r_i log z_i; gradient reaches only log z."""
    return T.mul(T.sum(T.mul(trace.log_Z, rewards)), -1.0 / rewards.shape[0])


def generator_train(model: CGAModel, batch: AuctionBatch, epochs: int = 10, lr: float = 1e-3,
                    batch_size: int = 512, seed: int = 0, variant: Variant = Variant(),
                    baseline: bool = True) -> list[float]:
    """REINFORCE against the frozen Evaluator; returns mean reward per epoch.

    With ``baseline`` the per-slot batch mean reward is subtracted before the
    policy-gradient step. This leaves the expected gradient unchanged and
    keeps the policy from collapsing onto its first good allocations.
    """
    store = model.store
    store.freeze()
    store.unfreeze("gen.")
    store.reset_optimizer()
    rng = np.random.default_rng([seed, 12])
    curve = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(len(batch), batch_size, rng):
            sub = batch.take(idx)
            phi = sub.phi(use_virtual_value=variant.use_virtual_value)
            with Graph():
                trace = model.generator(sub.X, sub.U, sub.bids, phi, mode="sample", rng=rng, pctr=sub.pctr)
                r = compute_rewards(model, sub, trace.allocs, phi, variant)
                adv = r.total - r.total.mean(axis=0, keepdims=True) if baseline else r.total
                loss = generator_loss(trace, adv)
                backward(loss)
            adam_step(store, lr)
            total += float(r.total.sum(axis=1).sum())
        curve.append(total / len(batch))
        log.debug("generator epoch %d mean reward %.5f", len(curve), curve[-1])
    store.freeze("gen.")
    return curve


# ---------------------------------------------------------------- PaymentNet


def _lagrangian(pay_rate, bid, won, values, theta, g1: int, state: TrainState):
    """L_P for rates (B, k, G); returns (loss tensor, rgt numpy (B, k), revenue numpy)."""
    p = T.mul(pay_rate, bid)
    u = T.mul(T.sub(values[..., None], p), won * theta)
    u0 = T.getitem(u, (Ellipsis, slice(g1, g1 + 1)))
    diff = T.sub(u, u0)
    best = np.argmax(diff.data, axis=-1)[..., None]
    rgt = T.reshape(T.gather(diff, best, axis=-1), best.shape[:-1])       # hard-max branch
    rev = T.sum(T.mul(T.getitem(p, (Ellipsis, g1)), theta[..., g1]), axis=-1)
    pen = T.add(T.sum(T.mul(rgt, state.lam), axis=-1),
                T.mul(T.sum(T.mul(rgt, rgt), axis=-1), 0.5 * state.rho))
    loss = T.mul(T.sum(T.sub(rev, pen)), -1.0 / bid.shape[0])
    return loss, rgt.data, rev.data


def paymentnet_rates(model: CGAModel, feats) -> "T.Tensor":
    return model.payment.rate_from_features(feats)


def paymentnet_train(model: CGAModel, cache: MisreportCache, state: TrainState, epochs: int = 10,
                     lr: float = 1e-3, batch_size: int = 512, seed: int = 0,
                     lambda_every: int = 5) -> list[dict]:
    """Alternate Adam steps on L_P with multiplier updates every ``lambda_every`` steps."""
    model.payment.fit_normalizer(cache.feats[cache.won])
    store = model.store
    store.freeze()
    store.unfreeze("pay.")
    store.reset_optimizer()
    rng = np.random.default_rng([seed, 13])
    acc, steps = [], 0
    curve = []
    for _ in range(epochs):
        rgts, revs = [], []
        for idx in _batches(len(cache), batch_size, rng):
            c = cache.take(idx)
            with Graph():
                rate = paymentnet_rates(model, c.feats)
                loss, rgt, rev = _lagrangian(rate, c.bid, c.won.astype(np.float64), c.values, c.theta,
                                             c.g1, state)
                backward(loss)
            adam_step(store, lr)
            acc.append(rgt.mean(axis=0))
            rgts.append(rgt)
            revs.append(rev)
            steps += 1
            if steps % lambda_every == 0:
                state.update(np.mean(acc, axis=0))
                acc = []
        rec = {"revenue": float(np.concatenate(revs).mean()),
               "rgt": float(np.concatenate(rgts).sum(axis=1).mean()),
               "lam": state.lam.tolist()}
        curve.append(rec)
        state.history.append(rec)
        log.debug("payment epoch %d %s", len(curve), rec)
    store.freeze("pay.")
    return curve


def end2end_train(model: CGAModel, batch: AuctionBatch, state: TrainState, steps: int = 200,
                  lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                  variant: Variant = Variant(end2end=True), lambda_every: int = 5) -> list[dict]:
    """Generator and PaymentNet trained jointly on L_P alone.

    Gradients reach the Generator through the PaymentNet inputs (winner
    embeddings and chosen-ad probabilities) of every misreport run.
    """
    if batch.values is None:
        raise ValueError("end-to-end training needs private values")
    store = model.store
    store.freeze()
    store.unfreeze("gen.")
    store.unfreeze("pay.")
    store.reset_optimizer()
    rng = np.random.default_rng([seed, 14])
    grid = check_grid(state.grid)
    g1 = int(np.flatnonzero(grid == 1.0)[0])
    k, G = model.cfg.k, len(grid)
    gen = model.generator
    acc, curve = [], []
    for step in range(steps):
        idx = rng.choice(len(batch), size=min(batch_size, len(batch)), replace=False)
        sub = batch.take(np.sort(idx))
        B = len(sub)
        allocs = gen(sub.X, sub.U, sub.bids, sub.phi(use_virtual_value=variant.use_virtual_value), pctr=sub.pctr).allocs
        X, U, bids, phi, pctr, ad = misreport_rows(model, sub, allocs, grid, variant.use_virtual_value)
        with Graph():
            trace = gen(X, U, bids, phi, pctr=pctr)
            A = trace.allocs
            hit = A == ad[:, None]
            won = hit.any(axis=1).astype(np.float64)
            slot = np.argmax(hit, axis=1)
            R = len(A)
            r = np.arange(R)
            theta = mechanism_ctr(model, X, U, bids, pctr, A, variant.use_evaluator)
            H_A = gather_rows(trace.H, A)
            H_sel = T.reshape(T.gather(H_A, np.broadcast_to(slot[:, None, None], (R, 1, H_A.shape[-1])), axis=1),
                              (R, H_A.shape[-1]))
            bminus = self_exclusion_bids(np.take_along_axis(bids, A, axis=1))[r, slot]
            Z_sel = T.exp(T.gather(trace.log_Z, slot[:, None], axis=1))
            ev = T.mul(Z_sel, theta[r, slot][:, None])
            feats = T.mul(T.concat([H_sel, bminus, ev], axis=-1), won[:, None])
            if step == 0:
                model.payment.fit_normalizer(feats.data[won > 0])
            rate = T.reshape(paymentnet_rates(model, feats), (B, k, G))
            values = np.take_along_axis(sub.values, allocs, axis=1)
            loss, rgt, rev = _lagrangian(rate, bids[r, ad].reshape(B, k, G), won.reshape(B, k, G), values,
                                         (theta[r, slot] * won).reshape(B, k, G), g1, state)
            backward(loss)
        adam_step(store, lr)
        acc.append(rgt.mean(axis=0))
        if (step + 1) % lambda_every == 0:
            state.update(np.mean(acc, axis=0))
            acc = []
        curve.append({"revenue": float(rev.mean()), "rgt": float(rgt.sum(axis=1).mean())})
    store.freeze("gen.")
    store.freeze("pay.")
    return curve


# ---------------------------------------------------------------- full pipeline


@dataclass
class TrainSettings:
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


def train_cga(model: CGAModel, batch: AuctionBatch, clicks: ClickLog, settings: TrainSettings = TrainSettings(),
              variant: Variant = Variant(), seed: int = 0, evaluator_done: bool = False) -> dict:
    """Evaluator -> freeze -> Generator -> freeze -> PaymentNet (or the end2end path)."""
    curves = {}
    if variant.use_evaluator and not evaluator_done:
        curves["evaluator"] = evaluator_train(model, batch, clicks, settings.evaluator_epochs,
                                              settings.lr, settings.batch, seed)
    model.sync_encoder()
    state = TrainState.fresh(model.cfg.k, settings.rho, settings.grid, settings.L, settings.lam0)
    if variant.end2end:
        curves["end2end"] = end2end_train(model, batch, state, settings.end2end_steps, settings.lr,
                                          settings.end2end_batch, seed, variant, settings.lambda_every)
    else:
        curves["generator"] = generator_train(model, batch, settings.generator_epochs, settings.lr,
                                              settings.generator_batch, seed, variant)
        cache = build_misreport_cache(model, batch, settings.grid, variant.use_evaluator,
                                      variant.use_virtual_value)
        curves["payment"] = paymentnet_train(model, cache, state, settings.payment_epochs, settings.lr,
                                             settings.payment_batch, seed, settings.lambda_every)
    curves["lambda"] = state.lam.tolist()
    return curves
