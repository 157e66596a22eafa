"""Auction instances, allocations, outcomes, and the utility/revenue primitives."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .valuation import ValueDistribution


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class AuctionInstance:
    """One auction: n candidate ads competing for k ordered slots.

    ``values`` exist only for synthetic data; mechanisms receive
    :meth:`mechanism_view`, which drops them. ``pctr`` is the point-wise CTR
    prediction for each ad (position-free), visible to mechanisms.
    """

    user_features: np.ndarray
    ad_features: np.ndarray
    bids: np.ndarray
    dists: tuple[ValueDistribution, ...]
    k: int
    values: Optional[np.ndarray] = None
    pctr: Optional[np.ndarray] = None
    uid: int = 0

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "user_features", _frozen(self.user_features, 1, "user_features"))
        set_(self, "ad_features", _frozen(self.ad_features, 2, "ad_features"))
        set_(self, "bids", _frozen(self.bids, 1, "bids"))
        set_(self, "dists", tuple(self.dists))
        n = self.ad_features.shape[0]
        if n < 1:
            raise ValueError("an auction needs at least one candidate ad")
        if not 1 <= self.k <= n:
            raise ValueError(f"slot count k={self.k} must satisfy 1 <= k <= n={n}")
        if self.bids.shape != (n,):
            raise ValueError(f"bids shape {self.bids.shape} != ({n},)")
        if np.any(self.bids < 0):
            raise ValueError("bids must be nonnegative")
        if len(self.dists) != n:
            raise ValueError(f"need {n} value distributions, got {len(self.dists)}")
        if self.values is not None:
            set_(self, "values", _frozen(self.values, 1, "values"))
            if self.values.shape != (n,) or np.any(self.values < 0):
                raise ValueError("values must be n nonnegative reals")
        if self.pctr is not None:
            set_(self, "pctr", _frozen(self.pctr, 1, "pctr"))
            if self.pctr.shape != (n,):
                raise ValueError("pctr must have one entry per ad")

    @property
    def n(self) -> int:
        return self.ad_features.shape[0]

    def mechanism_view(self) -> "AuctionInstance":
        return replace(self, values=None) if self.values is not None else self

    def with_bid(self, i: int, bid: float) -> "AuctionInstance":
        bids = self.bids.copy()
        bids[i] = bid
        return replace(self, bids=bids)

    def with_bids(self, bids) -> "AuctionInstance":
        return replace(self, bids=np.asarray(bids, dtype=np.float64))

    def without_ad(self, i: int) -> "AuctionInstance":
        keep = [j for j in range(self.n) if j != i]
        return replace(
            self,
            ad_features=self.ad_features[keep],
            bids=self.bids[keep],
            dists=tuple(self.dists[j] for j in keep),
            values=None if self.values is None else self.values[keep],
            pctr=None if self.pctr is None else self.pctr[keep],
        )


@dataclass(frozen=True)
class Allocation:
    """Ordered ad indices, slot 1 first."""

    slots: tuple[int, ...]

    def __init__(self, slots: Iterable[int]):
        object.__setattr__(self, "slots", tuple(int(s) for s in slots))

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def __getitem__(self, i):
        return self.slots[i]

    def slot_of(self, ad: int) -> Optional[int]:
        """0-based slot of ``ad`` or None when it is not allocated."""
        try:
            return self.slots.index(ad)
        except ValueError:
            return None

    def as_matrix(self, n: int) -> np.ndarray:
        """n x k 0/1 assignment matrix a_ij."""
        m = np.zeros((n, len(self.slots)), dtype=np.int64)
        m[list(self.slots), np.arange(len(self.slots))] = 1
        return m


@dataclass(frozen=True, eq=False)
class Outcome:
    """Allocation plus per-slot CPC payments and CTRs (length k each)."""

    allocation: Allocation
    payments: np.ndarray
    ctrs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "payments", _frozen(self.payments, 1, "payments"))
        object.__setattr__(self, "ctrs", _frozen(self.ctrs, 1, "ctrs"))
        k = len(self.allocation)
        if self.payments.shape != (k,) or self.ctrs.shape != (k,):
            raise ValueError("payments and ctrs must have one entry per slot")
        if np.any(self.ctrs < 0) or np.any(self.ctrs > 1):
            raise ValueError("ctrs must lie in [0, 1]")

    def ad_terms(self, ad: int) -> tuple[float, float]:
        """(payment, ctr) for ``ad``; (0, 0) if it lost."""
        s = self.allocation.slot_of(ad)
        if s is None:
            return 0.0, 0.0
        return float(self.payments[s]), float(self.ctrs[s])


def check_feasible(alloc: Allocation | Sequence[int], inst: AuctionInstance) -> bool:
    slots = list(alloc)
    return (len(slots) == inst.k
            and len(set(slots)) == len(slots)
            and all(0 <= s < inst.n for s in slots))


def utility(value: float, payment: float, ctr: float) -> float:
    return (value - payment) * ctr


def revenue(outcome: Outcome) -> float:
    return float(np.dot(outcome.payments, outcome.ctrs))
