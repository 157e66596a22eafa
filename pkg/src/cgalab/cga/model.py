"""Generator (set encoder + autoregressive decoder), Evaluator and PaymentNet.

Everything runs on batches: ``X`` (B, n, d_a) ad features, ``U`` (B, d_u)
users, ``bids`` and ``phi`` (B, n). Single-instance helpers at the bottom
wrap the batched code for tests and the public API.

Parameter prefixes: ``gen.enc`` / ``gen.dec`` for the Generator, ``eval.enc``
/ ``eval.*`` for the Evaluator (which owns its encoder copy), ``pay.*`` for
PaymentNet.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..core import AuctionInstance
from ..neural import (BiLSTM, GRUCell, Linear, MLP, MultiHeadAttention, ParamStore,
                      ShapeError, Tensor, sinusoidal_encoding)
from ..neural import ops as T
from ..valuation import virtual_value_coeffs

THETA_EPS = 1e-6


@dataclass(frozen=True)
class CGAConfig:
    n: int = 8
    k: int = 3
    d_a: int = 8
    d_u: int = 8
    d: int = 32
    heads: int = 4
    lstm_hidden: int = 32
    pos_prior: float = 0.8        # slot decay folded into the point-wise alpha
    w_init: float = 0.0
    pctr_feature: bool = True     # append the point-wise pCTR to each ad's encoder input
    seed: int = 0

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    H: Tensor        # (B, n, d)
    h_u: Tensor      # (B, d)
    c: Tensor        # (B, d)


@dataclass
class GenerationTrace:
    allocs: np.ndarray           # (B, k) int
    states: list                 # s_0..s_k, each (B, d) Tensor
    z: np.ndarray                # (B, k, n) probabilities per step
    log_Z: Tensor                # (B, k) log-probability of each chosen ad
    H: Tensor                    # (B, n, d) generator embeddings
    mode: str

    @property
    def Z(self) -> np.ndarray:
        return np.exp(self.log_Z.data)


@dataclass
class EvaluatorOutput:
    gamma: Tensor    # (B, m) in (0, 2)
    theta: Tensor    # (B, m) in [0, 1]
    alpha: np.ndarray
    pe: np.ndarray


@dataclass
class PaymentInputs:
    H_A: Tensor          # (R, d)
    B_minus: np.ndarray  # (R, k - 1)
    expected_value: Tensor  # (R, 1) = Z * Theta

    def features(self) -> Tensor:
        return T.concat([self.H_A, self.B_minus, self.expected_value], axis=-1)


class Encoder:
    """e_i = W[x_i; b_i]; H = e + attention(e); c = MLP([sum_i H_i; W_u u])."""

    def __init__(self, store: ParamStore, name: str, cfg: CGAConfig, rng: np.random.Generator):
        self.name = name
        self.pctr_feature = cfg.pctr_feature
        self.embed = Linear(store, f"{name}.embed", cfg.d_a + 1 + int(cfg.pctr_feature), cfg.d, rng)
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d, cfg.heads, rng)
        self.user = Linear(store, f"{name}.user", cfg.d_u, cfg.d, rng)
        self.ctx = MLP(store, f"{name}.ctx", [2 * cfg.d, cfg.d, cfg.d], ["relu", None], rng)

    def __call__(self, X, U, bids, pctr=None) -> EncoderOutput:
        X = np.asarray(X, dtype=np.float64)
        cols = [X, np.asarray(bids, dtype=np.float64)[..., None]]
        if self.pctr_feature:
            if pctr is None:
                raise ValueError("encoder configured with pctr_feature needs pctr")
            cols.append(np.asarray(pctr, dtype=np.float64)[..., None])
        e = self.embed(np.concatenate(cols, axis=-1))
        H = T.add(e, self.attn(e))
        h_u = self.user(U)
        pooled = T.sum(H, axis=1)
        c = self.ctx(T.concat([pooled, h_u], axis=-1))
        return EncoderOutput(H, h_u, c)


def gather_rows(H: Tensor, idx: np.ndarray) -> Tensor:
    """H (B, n, d), idx (B, m) -> (B, m, d)."""
    idx = np.asarray(idx, dtype=np.int64)
    full = np.broadcast_to(idx[..., None], idx.shape + (H.shape[-1],))
    return T.gather(H, full, axis=1)


class Generator:
    def __init__(self, store: ParamStore, cfg: CGAConfig, rng: np.random.Generator):
        self.store, self.cfg = store, cfg
        self.encoder = Encoder(store, "gen.enc", cfg, rng)
        store.add("gen.dec.start", rng.uniform(-1, 1, cfg.d) / np.sqrt(cfg.d))
        self.gru = GRUCell(store, "gen.dec.gru", cfg.d, cfg.d, rng)
        self.score = MLP(store, "gen.dec.score", [2 * cfg.d, cfg.d, 1], ["relu", None], rng)
        store.add("gen.dec.w", np.array([cfg.w_init]))

    def alloc_logprobs(self, s_t: Tensor, H: Tensor, phi: np.ndarray, mask: np.ndarray) -> Tensor:
        """log z^t over candidates; masked entries are -inf."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask.all(axis=-1)):
            raise ValueError("alloc_probs: every candidate is masked")
        B, n, d = H.shape
        s_b = T.broadcast_to(T.reshape(s_t, (B, 1, d)), (B, n, d))
        logits = T.reshape(self.score(T.concat([s_b, H], axis=-1)), (B, n))
        logits = T.add(logits, T.mul(T.exp(self.store["gen.dec.w"]), np.asarray(phi, dtype=np.float64)))
        return T.log_softmax(logits, axis=-1, mask=mask)

    def decode(self, enc: EncoderOutput, phi: np.ndarray, mode: str = "greedy",
               rng: Optional[np.random.Generator] = None, k: Optional[int] = None) -> GenerationTrace:
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decoding mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ValueError("sample mode needs an rng")
        H = enc.H
        B, n, d = H.shape
        k = self.cfg.k if k is None else k
        if k > n:
            raise ShapeError(f"cannot fill {k} slots from {n} candidates")
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (B, n):
            raise ShapeError(f"phi shape {phi.shape} != {(B, n)}")
        mask = np.zeros((B, n), dtype=bool)
        rows = np.arange(B)
        s = enc.c
        x = T.broadcast_to(self.store["gen.dec.start"], (B, d))
        states, zs, logs, allocs = [s], [], [], []
        for _ in range(k):
            s = self.gru(s, x)
            logp = self.alloc_logprobs(s, H, phi, mask)
            z = np.exp(logp.data)
            if mode == "greedy":
                idx = np.argmax(logp.data, axis=-1)          # lowest index on ties
            else:
                cdf = np.cumsum(z, axis=-1)
                u = rng.random(B)[:, None] * cdf[:, -1:]
                idx = np.minimum((cdf <= u).sum(axis=-1), n - 1)
                # never land on a masked ad through round-off
                bad = mask[rows, idx]
                if np.any(bad):
                    idx[bad] = np.argmax(logp.data[bad], axis=-1)
            logs.append(T.gather(logp, idx[:, None], axis=1))
            zs.append(z)
            allocs.append(idx)
            mask = mask.copy()
            mask[rows, idx] = True
            x = T.reshape(gather_rows(H, idx[:, None]), (B, d))
            states.append(s)
        return GenerationTrace(np.stack(allocs, axis=1), states, np.stack(zs, axis=1),
                               T.concat(logs, axis=1), H, mode)

    def __call__(self, X, U, bids, phi, mode="greedy", rng=None, pctr=None) -> GenerationTrace:
        return self.decode(self.encoder(X, U, bids, pctr), phi, mode, rng)


class Evaluator:
    """gamma = 2 sigmoid(MLP([H^s; H^f; H^b; h_u])), theta = min(alpha * gamma, 1)."""

    def __init__(self, store: ParamStore, cfg: CGAConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = Encoder(store, "eval.enc", cfg, rng)
        self.attn = MultiHeadAttention(store, "eval.attn", cfg.d, cfg.heads, rng, positional="sinusoidal")
        self.lstm = BiLSTM(store, "eval.lstm", cfg.d, cfg.lstm_hidden, rng)
        self.mlp = MLP(store, "eval.mlp", [2 * cfg.d + 2 * cfg.lstm_hidden, 128, 32, 1],
                       ["relu", "relu", "sigmoid"], rng)

    def forward(self, H_A: Tensor, h_u: Tensor, alpha: np.ndarray) -> EvaluatorOutput:
        H_A = T.as_tensor(H_A)
        if H_A.ndim == 2:
            H_A = T.reshape(H_A, (1,) + H_A.shape)
            h_u = T.reshape(T.as_tensor(h_u), (1, -1))
            out = self.forward(H_A, h_u, np.asarray(alpha)[None])
            return EvaluatorOutput(T.reshape(out.gamma, (-1,)), T.reshape(out.theta, (-1,)),
                                   out.alpha[0], out.pe)
        B, m, d = H_A.shape
        if m < 1:
            raise ShapeError("evaluator: empty allocation")
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (B, m):
            raise ShapeError(f"alpha shape {alpha.shape} != {(B, m)}")
        Hs = self.attn(H_A)
        Hf, Hb = self.lstm(H_A)
        hu = T.broadcast_to(T.reshape(h_u, (B, 1, -1)), (B, m, h_u.shape[-1]))
        g = T.mul(T.reshape(self.mlp(T.concat([Hs, Hf, Hb, hu], axis=-1)), (B, m)), 2.0)
        theta = T.min_with_const(T.mul(g, alpha), 1.0)
        return EvaluatorOutput(g, theta, alpha, sinusoidal_encoding(m, d))

    def alpha(self, pctr: np.ndarray, allocs: np.ndarray) -> np.ndarray:
        """Point-wise CTR at each slot: pctr * pos_prior**slot, clipped to [0, 1]."""
        allocs = np.asarray(allocs, dtype=np.int64)
        a = np.take_along_axis(np.asarray(pctr, dtype=np.float64), allocs, axis=-1)
        return np.clip(a * self.cfg.pos_prior ** np.arange(allocs.shape[-1]), 0.0, 1.0)

    def ctr(self, X, U, bids, pctr, allocs) -> np.ndarray:
        """Evaluator CTR of the given allocations, numpy in and out (B, m)."""
        enc = self.encoder(X, U, bids, pctr)
        H_A = gather_rows(enc.H, allocs)
        return self.forward(H_A, enc.h_u, self.alpha(pctr, allocs)).theta.data


class PaymentNet:
    """p~ = sigmoid(MLP([h_A; B^-; Z Theta])), p = p~ * b.

    Inputs are standardized by a fixed per-feature affine map
    (``paynorm.*``), fitted once on the training cache and never trained.
    """

    def __init__(self, store: ParamStore, cfg: CGAConfig, rng: np.random.Generator):
        self.cfg = cfg
        dim = cfg.d + cfg.k - 1 + 1
        self.shift = store.add("paynorm.shift", np.zeros(dim))
        self.scale = store.add("paynorm.scale", np.ones(dim))
        store.freeze("paynorm.")
        self.mlp = MLP(store, "pay.mlp", [dim, 128, 32, 1], ["relu", "relu", "sigmoid"], rng)

    def fit_normalizer(self, feats: np.ndarray) -> None:
        """Standardize with the mean / std of ``feats`` (rows, dim)."""
        feats = np.asarray(feats, dtype=np.float64).reshape(-1, self.shift.shape[0])
        if len(feats) == 0:
            return
        self.shift.data[...] = feats.mean(axis=0)
        self.scale.data[...] = 1.0 / (feats.std(axis=0) + 1e-6)

    def rate_from_features(self, feats) -> Tensor:
        """Payment rate for raw feature rows (..., dim) -> (...)."""
        x = T.mul(T.sub(feats, self.shift.data), self.scale.data)
        out = self.mlp(x)
        return T.reshape(out, out.shape[:-1])

    def rate(self, pi: PaymentInputs) -> Tensor:
        return self.rate_from_features(pi.features())

    def __call__(self, pi: PaymentInputs, bids_of_winners) -> Tensor:
        return T.mul(self.rate(pi), np.asarray(bids_of_winners, dtype=np.float64))


def self_exclusion_bids(win_bids: np.ndarray) -> np.ndarray:
    """(..., k) winners' bids -> (..., k, k-1); row i drops winner i, slot order kept."""
    k = win_bids.shape[-1]
    keep = np.array([[j for j in range(k) if j != i] for i in range(k)], dtype=np.int64).reshape(k, k - 1)
    return win_bids[..., keep]


def payment_inputs(H: Tensor, allocs: np.ndarray, bids: np.ndarray, Z, theta) -> PaymentInputs:
    """Per-winner PaymentNet inputs for a batch of allocations, flattened to (B * k) rows."""
    B, k = allocs.shape
    H_A = gather_rows(H, allocs)
    win_bids = np.take_along_axis(np.asarray(bids, dtype=np.float64), allocs, axis=1)
    ev = T.mul(Z, theta)
    return PaymentInputs(T.reshape(H_A, (B * k, H.shape[-1])),
                         self_exclusion_bids(win_bids).reshape(B * k, k - 1),
                         T.reshape(ev, (B * k, 1)))


class CGAModel:
    """Container for the three networks sharing one :class:`ParamStore`."""

    def __init__(self, cfg: CGAConfig, store: Optional[ParamStore] = None):
        self.cfg = cfg
        self.store = ParamStore() if store is None else store
        rng = np.random.default_rng([cfg.seed, 7])
        self.generator = Generator(self.store, cfg, rng)
        self.evaluator = Evaluator(self.store, cfg, rng)
        self.payment = PaymentNet(self.store, cfg, rng)

    def sync_encoder(self) -> None:
        """Start the Generator's encoder from the trained Evaluator encoder."""
        self.store.copy_prefix("eval.enc.", "gen.enc.")


# ---------------------------------------------------------------- batches


@dataclass(frozen=True, eq=False)
class AuctionBatch:
    X: np.ndarray          # (B, n, d_a)
    U: np.ndarray          # (B, d_u)
    bids: np.ndarray       # (B, n)
    pctr: np.ndarray       # (B, n)
    phi_slope: np.ndarray  # (B, n) phi = slope * b + intercept
    phi_icept: np.ndarray
    values: Optional[np.ndarray] = None
    uids: Optional[np.ndarray] = None

    @classmethod
    def from_instances(cls, instances) -> "AuctionBatch":
        insts = list(instances)
        if not insts:
            raise ValueError("empty batch")
        coef = np.array([[virtual_value_coeffs(d) for d in inst.dists] for inst in insts])
        values = None
        if all(inst.values is not None for inst in insts):
            values = np.stack([inst.values for inst in insts])
        for inst in insts:
            if inst.pctr is None:
                raise ValueError("CGA needs point-wise pctr on every instance")
        return cls(X=np.stack([inst.ad_features for inst in insts]),
                   U=np.stack([inst.user_features for inst in insts]),
                   bids=np.stack([inst.bids for inst in insts]),
                   pctr=np.stack([inst.pctr for inst in insts]),
                   phi_slope=coef[..., 0], phi_icept=coef[..., 1],
                   values=values, uids=np.array([inst.uid for inst in insts]))

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "AuctionBatch":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return AuctionBatch(self.X[idx], self.U[idx], self.bids[idx], self.pctr[idx],
                            self.phi_slope[idx], self.phi_icept[idx], pick(self.values), pick(self.uids))

    def phi(self, bids: Optional[np.ndarray] = None, use_virtual_value: bool = True) -> np.ndarray:
        b = self.bids if bids is None else bids
        if not use_virtual_value:
            return np.array(b, dtype=np.float64)
        return self.phi_slope * b + self.phi_icept


# ---------------------------------------------------------------- single-instance API


def _one(inst: AuctionInstance):
    pctr = None if inst.pctr is None else inst.pctr[None]
    return inst.ad_features[None], inst.user_features[None], inst.bids[None], pctr


def encode(model: CGAModel, inst: AuctionInstance, which: str = "gen") -> EncoderOutput:
    enc = (model.generator.encoder if which == "gen" else model.evaluator.encoder)(*_one(inst))
    return EncoderOutput(T.reshape(enc.H, enc.H.shape[1:]), T.reshape(enc.h_u, (-1,)),
                         T.reshape(enc.c, (-1,)))


def alloc_probs(model: CGAModel, s_t, H, phi, mask) -> np.ndarray:
    """z^t for one instance: s_t (d,), H (n, d), phi and mask (n,)."""
    s_t, H = T.as_tensor(s_t), T.as_tensor(H)
    logp = model.generator.alloc_logprobs(T.reshape(s_t, (1, -1)), T.reshape(H, (1,) + H.shape),
                                          np.asarray(phi)[None], np.asarray(mask)[None])
    return np.exp(logp.data[0])


def generate(model: CGAModel, inst: AuctionInstance, phi=None, mode: str = "greedy",
             rng: Optional[np.random.Generator] = None) -> GenerationTrace:
    if phi is None:
        phi = AuctionBatch.from_instances([inst]).phi()[0]
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (inst.n,):
        raise ShapeError(f"phi must have length n={inst.n}")
    enc = model.generator.encoder(*_one(inst))
    return model.generator.decode(enc, phi[None], mode, rng, k=inst.k)


def evaluator_forward(model: CGAModel, H_A, h_u, alpha) -> EvaluatorOutput:
    return model.evaluator.forward(H_A, h_u, alpha)


def paymentnet_forward(model: CGAModel, pi: PaymentInputs, bids_of_winners) -> np.ndarray:
    return model.payment(pi, bids_of_winners).data
