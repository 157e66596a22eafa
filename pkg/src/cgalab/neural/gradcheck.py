"""Central finite-difference gradient checking against the tape."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Graph, Tensor, backward


def max_relative_error(loss_fn: Callable[[], Tensor], store: ParamStore,
                       names: list[str] | None = None, h: float = 1e-5,
                       floor: float = 1e-4) -> float:
    """Worst |analytic - numeric| / max(|analytic| + |numeric|, floor) over all entries.

    The floor keeps exactly-zero gradients (e.g. attention key biases, which
    softmax is invariant to) from being judged on finite-difference round-off.

    ``loss_fn`` must rebuild the scalar loss from the current parameter values.
    """
    names = list(store) if names is None else names
    store.zero_grad()
    with Graph():
        loss = loss_fn()
        backward(loss)
    analytic = {n: (store[n].grad.copy() if store[n].grad is not None
                    else np.zeros_like(store[n].data)) for n in names}
    store.zero_grad()
    worst = 0.0
    for n in names:
        p = store[n].data
        flat = p.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = float(loss_fn().data)
            flat[j] = old - h
            down = float(loss_fn().data)
            flat[j] = old
            num[j] = (up - down) / (2 * h)
        a = analytic[n].reshape(-1)
        err = np.abs(a - num) / np.maximum(np.abs(a) + np.abs(num), floor)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
