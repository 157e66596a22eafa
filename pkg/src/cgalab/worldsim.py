"""Synthetic auction world with permutation-aware ground-truth CTRs.

Ad ``i`` shown at 0-based slot ``s`` of allocation ``A`` clicks with

    theta = clamp(q_i * pos_decay**s * (1 + sum_{t != s} competition * cos(x_i, x_A[t]) / (1 + |s - t|)),
                  ctr_floor, 1)

where ``q_i = sigmoid(3 * <x_i, u @ P>)`` and ``P`` is a fixed projection drawn
from the world seed. A negative ``competition`` makes similar neighbours
cannibalise each other, so an ad can click more at slot 2 than at slot 1.
"""
from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .core import Allocation, AuctionInstance, check_feasible
from .valuation import ValueDistribution, from_dict, sample, to_dict

QUALITY_SCALE = 3.0

# RNG stream tags: every draw is keyed by (seed, stream, index)
_STREAM_PROJECTION = 0
_STREAM_INSTANCE = 1
_STREAM_LOG = 2


@dataclass(frozen=True)
class WorldConfig:
    n: int = 8
    k: int = 3
    d_a: int = 8
    d_u: int = 8
    pos_decay: float = 0.8
    competition: float = -0.3
    pred_noise: float = 0.1
    ctr_floor: float = 1e-4
    seed: int = 0
    value_dist: dict = field(default_factory=lambda: {"kind": "uniform", "params": [0.0, 1.0]})

    def __post_init__(self):
        if not 0 < self.pos_decay <= 1:
            raise ValueError("pos_decay must lie in (0, 1]")
        if not 0 < self.ctr_floor <= 0.01:
            raise ValueError("ctr_floor must lie in (0, 0.01]")
        if self.pred_noise < 0:
            raise ValueError("pred_noise must be >= 0")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        from_dict(self.value_dist)  # validates

    def __hash__(self):
        return hash(json.dumps(asdict(self), sort_keys=True))

    @property
    def dist(self) -> ValueDistribution:
        return from_dict(self.value_dist)

    def replace(self, **kw) -> "WorldConfig":
        d = asdict(self)
        d.update(kw)
        return WorldConfig(**d)


def stream(seed: int, tag: int, index: int) -> np.random.Generator:
    """Counter-based generator: independent of how indices are partitioned."""
    return np.random.default_rng([seed, tag, index])


@dataclass
class ClickLog:
    """List-wise exposure log: one exposed allocation per auction."""

    auction_ids: np.ndarray   # (N,)
    allocs: np.ndarray        # (N, k) int
    pctr: np.ndarray          # (N, k) point-wise alpha for the exposed slots
    clicks: np.ndarray        # (N, k) 0/1

    def __len__(self) -> int:
        return len(self.auction_ids)


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


class WorldModel:
    """Ground-truth CTR oracle for one :class:`WorldConfig`."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        rng = stream(cfg.seed, _STREAM_PROJECTION, 0)
        self.projection = rng.standard_normal((cfg.d_u, cfg.d_a)) / np.sqrt(cfg.d_u)

    def _quality(self, x: np.ndarray, user: np.ndarray) -> np.ndarray:
        u_proj = user @ self.projection
        return 1.0 / (1.0 + np.exp(-QUALITY_SCALE * np.einsum("...nd,...d->...n", x, u_proj)))

    def base_quality(self, inst: AuctionInstance) -> np.ndarray:
        return self._quality(_unit_rows(inst.ad_features), inst.user_features)

    def position_decay(self, k: int) -> np.ndarray:
        return self.cfg.pos_decay ** np.arange(k)

    def _theta(self, q: np.ndarray, x: np.ndarray, allocs: np.ndarray) -> np.ndarray:
        # q (B|1, n), x (B|1, n, d), allocs (B, m); leading dims broadcast
        m = allocs.shape[-1]
        rows = np.arange(max(q.shape[0], allocs.shape[0]))[:, None] if q.shape[0] > 1 else 0
        xa = x[rows, allocs]                                              # (B, m, d)
        sim = xa @ np.swapaxes(xa, -1, -2)
        slot = np.arange(m)
        weight = 1.0 / (1.0 + np.abs(slot[:, None] - slot[None, :]))
        np.fill_diagonal(weight, 0.0)
        interaction = (sim * weight).sum(axis=-1)
        theta = q[rows, allocs] * self.position_decay(m) * (1.0 + self.cfg.competition * interaction)
        return np.clip(theta, self.cfg.ctr_floor, 1.0)

    def ctr_table(self, inst: AuctionInstance, allocs: np.ndarray) -> np.ndarray:
        """True CTRs of many allocations of one instance: (m, k) -> (m, k).

        Also accepts allocations shorter than ``inst.k``.
        """
        allocs = np.asarray(allocs, dtype=np.int64)
        x = _unit_rows(inst.ad_features)
        q = self._quality(x, inst.user_features)
        return self._theta(q[None], x[None], allocs)

    def ctr_batch(self, ad_features: np.ndarray, user: np.ndarray, allocs: np.ndarray) -> np.ndarray:
        """One allocation per instance: features (B, n, d_a), users (B, d_u), allocs (B, m) -> (B, m)."""
        allocs = np.asarray(allocs, dtype=np.int64)
        x = _unit_rows(np.asarray(ad_features, dtype=np.float64))
        q = self._quality(x, np.asarray(user, dtype=np.float64))
        return self._theta(q, x, allocs)

    def true_ctr(self, inst: AuctionInstance, alloc: Allocation) -> np.ndarray:
        if not check_feasible(alloc, inst):
            raise ValueError(f"infeasible allocation {tuple(alloc)} for n={inst.n}, k={inst.k}")
        return self.ctr_table(inst, np.asarray([list(alloc)]))[0]

    def pointwise_alpha(self, pctr: np.ndarray, allocs: np.ndarray) -> np.ndarray:
        """alpha = clamp(qhat * pos_decay**s, 0, 1) for each slot of each allocation."""
        allocs = np.asarray(allocs, dtype=np.int64)
        return np.clip(pctr[allocs] * self.position_decay(allocs.shape[-1]), 0.0, 1.0)


@functools.lru_cache(maxsize=32)
def world_model(cfg: WorldConfig) -> WorldModel:
    return WorldModel(cfg)


def true_ctr(inst: AuctionInstance, alloc: Allocation, cfg: WorldConfig) -> np.ndarray:
    return world_model(cfg).true_ctr(inst, alloc)


def sample_clicks(theta, rng: np.random.Generator) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return (rng.random(theta.shape) < theta).astype(np.int64)


def gen_instance(cfg: WorldConfig, rng: np.random.Generator, uid: int = 0) -> AuctionInstance:
    """Unit-norm Gaussian features, values from the configured family, truthful bids.

    The point-wise prediction ``pctr`` is ``clamp(q * exp(eta), 0, 1)`` with
    ``eta ~ N(0, pred_noise**2)``.
    """
    user = _unit_rows(rng.standard_normal(cfg.d_u))
    ads = _unit_rows(rng.standard_normal((cfg.n, cfg.d_a)))
    dist = cfg.dist
    values = np.asarray(sample(dist, rng, size=cfg.n), dtype=np.float64)
    eta = rng.standard_normal(cfg.n) * cfg.pred_noise
    inst = AuctionInstance(user_features=user, ad_features=ads, bids=values,
                           dists=(dist,) * cfg.n, k=cfg.k, values=values, uid=uid)
    q = world_model(cfg).base_quality(inst)
    pctr = np.clip(q * np.exp(eta), 0.0, 1.0)
    return AuctionInstance(user_features=user, ad_features=ads, bids=values,
                           dists=(dist,) * cfg.n, k=cfg.k, values=values, pctr=pctr, uid=uid)


def instance_at(cfg: WorldConfig, index: int, seed_offset: int = 0) -> AuctionInstance:
    """The ``index``-th instance of the world's instance stream."""
    return gen_instance(cfg, stream(cfg.seed + seed_offset, _STREAM_INSTANCE, index), uid=index)


def iter_instances(cfg: WorldConfig, start: int, count: int, seed_offset: int = 0) -> Iterator[AuctionInstance]:
    for i in range(start, start + count):
        yield instance_at(cfg, i, seed_offset)


def logged_exposure(cfg: WorldConfig, inst: AuctionInstance, index: int,
                    seed_offset: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Logging-policy exposure for one auction: (alloc, alpha, clicks).

    Half the auctions show a uniformly random k-permutation, half rank by
    bid * pctr (ties to the lower index).
    """
    rng = stream(cfg.seed + seed_offset, _STREAM_LOG, index)
    model = world_model(cfg)
    if rng.random() < 0.5:
        alloc = rng.permutation(inst.n)[: inst.k]
    else:
        score = inst.bids * inst.pctr
        alloc = np.lexsort((np.arange(inst.n), -score))[: inst.k]
    alloc = np.asarray(alloc, dtype=np.int64)
    alpha = model.pointwise_alpha(inst.pctr, alloc[None, :])[0]
    theta = model.ctr_table(inst, alloc[None, :])[0]
    clicks = sample_clicks(theta, rng)
    return alloc, alpha, clicks


def gen_dataset(cfg: WorldConfig, num_auctions: int, start: int = 0,
                seed_offset: int = 0) -> tuple[list[AuctionInstance], ClickLog]:
    if num_auctions < 1:
        raise ValueError("num_auctions must be >= 1")
    instances, allocs, alphas, clicks = [], [], [], []
    for idx in range(start, start + num_auctions):
        inst = instance_at(cfg, idx, seed_offset)
        a, al, c = logged_exposure(cfg, inst, idx, seed_offset)
        instances.append(inst)
        allocs.append(a)
        alphas.append(al)
        clicks.append(c)
    log = ClickLog(auction_ids=np.arange(start, start + num_auctions),
                   allocs=np.array(allocs), pctr=np.array(alphas), clicks=np.array(clicks))
    return instances, log


# ---------------------------------------------------------------- JSON Lines


def _num(x: float) -> float:
    return float(x)


def record_to_json(inst: AuctionInstance, alloc, alpha, clicks) -> str:
    ads = []
    for i in range(inst.n):
        ads.append({
            "features": [_num(v) for v in inst.ad_features[i]],
            "bid": _num(inst.bids[i]),
            "value": _num(inst.values[i]) if inst.values is not None else None,
            "dist": to_dict(inst.dists[i]),
            "pctr": _num(inst.pctr[i]) if inst.pctr is not None else None,
        })
    rec = {
        "id": int(inst.uid),
        "user": [_num(v) for v in inst.user_features],
        "ads": ads,
        "k": int(inst.k),
        "log": {"alloc": [int(a) for a in alloc], "pctr": [_num(a) for a in alpha],
                "clicks": [int(c) for c in clicks]},
    }
    return json.dumps(rec, separators=(",", ":"))


def write_dataset(path, instances: list[AuctionInstance], log: ClickLog) -> None:
    with open(path, "w") as fh:
        for inst, a, al, c in zip(instances, log.allocs, log.pctr, log.clicks):
            fh.write(record_to_json(inst, a, al, c) + "\n")


def read_dataset(path) -> tuple[list[AuctionInstance], ClickLog]:
    instances, ids, allocs, alphas, clicks = [], [], [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ads = rec["ads"]
                values = [a.get("value") for a in ads]
                pctr = [a.get("pctr") for a in ads]
                inst = AuctionInstance(
                    user_features=rec["user"],
                    ad_features=[a["features"] for a in ads],
                    bids=[a["bid"] for a in ads],
                    dists=tuple(from_dict(a["dist"]) for a in ads),
                    k=rec["k"],
                    values=None if any(v is None for v in values) else values,
                    pctr=None if any(p is None for p in pctr) else pctr,
                    uid=rec["id"],
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed auction record ({exc})") from exc
            instances.append(inst)
            ids.append(rec["id"])
            allocs.append(rec["log"]["alloc"])
            alphas.append(rec["log"]["pctr"])
            clicks.append(rec["log"]["clicks"])
    log = ClickLog(auction_ids=np.array(ids), allocs=np.array(allocs, dtype=np.int64),
                   pctr=np.array(alphas, dtype=np.float64), clicks=np.array(clicks, dtype=np.int64))
    return instances, log
