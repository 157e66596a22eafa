"""Layers built on the tape ops. Each layer registers its weights in a ParamStore
under a dotted prefix and reads them back at call time, so checkpoints and
freezing operate on plain names."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import ShapeError, Tensor


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.store, self.name = store, name
        self.d_in, self.d_out = d_in, d_out
        store.add(f"{name}.W", _uniform(rng, d_in, (d_in, d_out)))
        self.bias = bias
        if bias:
            store.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: expected last dim {self.d_in}, got shape {x.shape}")
        y = T.matmul(x, self.store[f"{self.name}.W"])
        if self.bias:
            y = T.add(y, self.store[f"{self.name}.b"])
        return y


class MLP:
    """Stack of Linear layers; ``activations[i]`` follows layer ``i``."""

    _ACT = {"relu": T.relu, "sigmoid": T.sigmoid, "tanh": T.tanh, None: None}

    def __init__(self, store: ParamStore, name: str, sizes: Sequence[int],
                 activations: Sequence[str | None], rng: np.random.Generator):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        self.layers = [Linear(store, f"{name}.{i}", a, b, rng)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.acts = [self._ACT[a] for a in activations]

    def __call__(self, x) -> Tensor:
        for layer, act in zip(self.layers, self.acts):
            x = layer(x)
            if act is not None:
                x = act(x)
        return x

    @property
    def last(self) -> Linear:
        return self.layers[-1]


def sinusoidal_encoding(seq_len: int, d: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d)
    pe = np.zeros((seq_len, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class MultiHeadAttention:
    """Scaled dot-product self-attention with learned Q/K/V/output projections.

    Input is (batch, seq, d) or (seq, d). With ``positional="sinusoidal"`` the
    fixed encoding is added to the input before projection.
    """

    def __init__(self, store: ParamStore, name: str, d: int, heads: int,
                 rng: np.random.Generator, positional: str = "none"):
        if d % heads:
            raise ShapeError(f"{name}: model dim {d} not divisible by {heads} heads")
        if positional not in ("none", "sinusoidal"):
            raise ValueError(f"unknown positional mode {positional!r}")
        self.d, self.heads, self.dh = d, heads, d // heads
        self.positional = positional
        self.q = Linear(store, f"{name}.q", d, d, rng)
        self.k = Linear(store, f"{name}.k", d, d, rng)
        self.v = Linear(store, f"{name}.v", d, d, rng)
        self.o = Linear(store, f"{name}.o", d, d, rng)

    def _split(self, x: Tensor, b: int, s: int) -> Tensor:
        return T.transpose(T.reshape(x, (b, s, self.heads, self.dh)), (0, 2, 1, 3))

    def __call__(self, x, return_weights: bool = False):
        x = T.as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        b, s, d = x.shape
        if d != self.d:
            raise ShapeError(f"attention: expected dim {self.d}, got shape {x.shape}")
        if self.positional == "sinusoidal":
            x = T.add(x, sinusoidal_encoding(s, d))
        q = self._split(self.q(x), b, s)
        k = self._split(self.k(x), b, s)
        v = self._split(self.v(x), b, s)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.dh))
        w = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(w, v), (0, 2, 1, 3)), (b, s, d))
        out = self.o(ctx)
        if squeeze:
            out = T.reshape(out, (s, d))
        return (out, w) if return_weights else out


class GRUCell:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_h: int, rng: np.random.Generator):
        self.store, self.name, self.d_in, self.d_h = store, name, d_in, d_h
        for g in ("z", "r", "h"):
            store.add(f"{name}.W_{g}", _uniform(rng, d_in, (d_in, d_h)))
            store.add(f"{name}.U_{g}", _uniform(rng, d_h, (d_h, d_h)))
            store.add(f"{name}.b_{g}", np.zeros(d_h))

    def __call__(self, s_prev, x) -> Tensor:
        p = lambda n: self.store[f"{self.name}.{n}"]  # noqa: E731
        s_prev, x = T.as_tensor(s_prev), T.as_tensor(x)
        if s_prev.shape[-1] != self.d_h or x.shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: state {s_prev.shape} / input {x.shape} "
                             f"do not match ({self.d_h}, {self.d_in})")
        z = T.sigmoid(x @ p("W_z") + s_prev @ p("U_z") + p("b_z"))
        r = T.sigmoid(x @ p("W_r") + s_prev @ p("U_r") + p("b_r"))
        h = T.tanh(x @ p("W_h") + (r * s_prev) @ p("U_h") + p("b_h"))
        return (1.0 - z) * s_prev + z * h


class LSTM:
    """Single-direction LSTM over (batch, seq, d_in); returns per-step hidden states."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_h: int, rng: np.random.Generator):
        self.store, self.name, self.d_h = store, name, d_h
        store.add(f"{name}.W", _uniform(rng, d_in, (d_in, 4 * d_h)))
        store.add(f"{name}.U", _uniform(rng, d_h, (d_h, 4 * d_h)))
        b = np.zeros(4 * d_h)
        b[d_h:2 * d_h] = 1.0  # forget gate
        store.add(f"{name}.b", b)

    def __call__(self, x, reverse: bool = False) -> Tensor:
        x = T.as_tensor(x)
        bsz, s, _ = x.shape
        W, U, b = (self.store[f"{self.name}.{n}"] for n in ("W", "U", "b"))
        xw = T.add(T.matmul(x, W), b)
        h = T.Tensor(np.zeros((bsz, self.d_h)))
        c = T.Tensor(np.zeros((bsz, self.d_h)))
        H = self.d_h
        outs: list[Tensor | None] = [None] * s
        order = range(s - 1, -1, -1) if reverse else range(s)
        for t in order:
            gates = T.add(xw[:, t, :], T.matmul(h, U))
            i = T.sigmoid(gates[:, :H])
            f = T.sigmoid(gates[:, H:2 * H])
            g = T.tanh(gates[:, 2 * H:3 * H])
            o = T.sigmoid(gates[:, 3 * H:])
            c = f * c + i * g
            h = o * T.tanh(c)
            outs[t] = h
        return T.stack(outs, axis=1)


class BiLSTM:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_h: int, rng: np.random.Generator):
        self.fwd = LSTM(store, f"{name}.fwd", d_in, d_h, rng)
        self.bwd = LSTM(store, f"{name}.bwd", d_in, d_h, rng)

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        x = T.as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[1] < 1:
            raise ShapeError("bilstm: empty sequence")
        hf, hb = self.fwd(x), self.bwd(x, reverse=True)
        if squeeze:
            hf, hb = hf[0], hb[0]
        return hf, hb
