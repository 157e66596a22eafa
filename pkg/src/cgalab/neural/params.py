"""Named parameter store with gradient slots, Adam moments, and checkpoints."""
from __future__ import annotations

import json
import os
from typing import Iterator

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = "AFORGE1"


class ParamStore:
    """Flat mapping name -> trainable tensor, plus Adam state.

    Names are dotted (``"eval.mlp.0.W"``); ``freeze(prefix)`` turns off
    gradient tracking for every parameter under a prefix.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def freeze(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self._params[n].requires_grad = False
            self._params[n].grad = None

    def unfreeze(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self._params[n].requires_grad = True

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def copy_prefix(self, src: str, dst: str) -> None:
        """Overwrite parameters under ``dst`` with values from ``src``."""
        for n in self.names(src):
            self._params[dst + n[len(src):]].data[...] = self._params[n].data

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: self._params[n].data.copy() for n in self.names(prefix)}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for n, v in snap.items():
            self._params[n].data[...] = v

    def reset_optimizer(self) -> None:
        for n in self._params:
            self._m[n][...] = 0.0
            self._v[n][...] = 0.0
        self.step = 0

    # -- checkpoints ---------------------------------------------------------

    def to_json(self, prefix: str = "") -> str:
        body = {
            "magic": CHECKPOINT_MAGIC,
            "params": {
                n: {"shape": list(self._params[n].shape),
                    "values": [float(x) for x in self._params[n].data.ravel()]}
                for n in sorted(self.names(prefix))
            },
        }
        return json.dumps(body, separators=(",", ":"))

    def save(self, path: str | os.PathLike, prefix: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json(prefix))

    def load(self, path: str | os.PathLike, strict: bool = True) -> None:
        with open(path) as fh:
            body = json.load(fh)
        if body.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {body.get('magic')!r})")
        for name, entry in body["params"].items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"{path}: unknown parameter {name!r}")
                continue
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != self._params[name].shape:
                raise ValueError(f"{path}: shape mismatch for {name}: {arr.shape} vs {self._params[name].shape}")
            self._params[name].data[...] = arr


def adam_step(params: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter holding a gradient.

    Gradients are cleared afterwards. Parameters without a gradient (frozen or
    unreachable) keep their value and moments.
    """
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
