"""Value distributions, sampling, and (ironed) virtual values."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

# quantile at which the exponential support is cut for the ironing grid
EXP_TAIL_QUANTILE = 0.9999


class OutOfSupportError(ValueError):
    pass


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi):
            raise ValueError(f"Uniform needs 0 <= lo < hi, got ({self.lo}, {self.hi})")

    kind = "uniform"

    @property
    def params(self) -> list[float]:
        return [self.lo, self.hi]

    def pdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.where((v >= self.lo) & (v <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.clip((v - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def ppf(self, q):
        return self.lo + np.asarray(q, dtype=np.float64) * (self.hi - self.lo)

    def in_support(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return (v >= self.lo) & (v <= self.hi)

    def virtual_value_formula(self, v):
        # v - (1 - F) / f = 2v - hi on the support
        return 2.0 * np.asarray(v, dtype=np.float64) - self.hi

    @property
    def upper(self) -> float:
        return self.hi


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"Exponential needs rate > 0, got {self.rate}")

    kind = "exponential"

    @property
    def params(self) -> list[float]:
        return [self.rate]

    def pdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.where(v >= 0, self.rate * np.exp(-self.rate * np.maximum(v, 0.0)), 0.0)

    def cdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.where(v >= 0, -np.expm1(-self.rate * np.maximum(v, 0.0)), 0.0)

    def ppf(self, q):
        return -np.log1p(-np.asarray(q, dtype=np.float64)) / self.rate

    def in_support(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) >= 0

    def virtual_value_formula(self, v):
        return np.asarray(v, dtype=np.float64) - 1.0 / self.rate

    @property
    def upper(self) -> float:
        return float(self.ppf(EXP_TAIL_QUANTILE))


ValueDistribution = Union[Uniform, Exponential]


def dist_eval(d: ValueDistribution, v: float) -> tuple[float, float]:
    """(pdf, cdf) at ``v``."""
    return float(d.pdf(v)), float(d.cdf(v))


def sample(d: ValueDistribution, rng: np.random.Generator, size=None):
    """Inverse-CDF draws."""
    u = rng.random(size)
    out = d.ppf(u)
    return float(out) if size is None else out


def virtual_value(d: ValueDistribution, v):
    """phi(v) = v - (1 - F(v)) / f(v); both supported families are regular."""
    if not np.all(d.in_support(v)):
        raise OutOfSupportError(f"virtual value queried outside the support of {d}: {v}")
    out = d.virtual_value_formula(v)
    return float(out) if np.ndim(out) == 0 else out


def bid_virtual_value(d: ValueDistribution, b):
    """Virtual value of a bid, extending the closed form past the support.

    Misreports such as 2x a Uniform(0,1) value leave the support; the closed
    form stays strictly increasing there, which keeps virtual-welfare
    allocation monotone in the bid.
    """
    out = d.virtual_value_formula(b)
    return float(out) if np.ndim(out) == 0 else out


def virtual_value_coeffs(d: ValueDistribution) -> tuple[float, float]:
    """(slope, intercept) with phi(v) = slope * v + intercept on the support.

    Both supported families have affine virtual values, which lets batched
    code recompute phi for any bid with one multiply-add.
    """
    if d.kind == "uniform":
        return 2.0, -float(d.hi)
    if d.kind == "exponential":
        return 1.0, -1.0 / float(d.rate)
    raise ValueError(f"no closed-form virtual value for {d!r}")


@dataclass(frozen=True)
class IronedCurve:
    """Ironed virtual values tabulated on a grid, ascending in value."""

    quantiles: np.ndarray   # sale probability 1 - F(v) at each grid value
    values: np.ndarray
    phi_values: np.ndarray

    def __call__(self, v):
        return np.interp(v, self.values, self.phi_values)


def _upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper concave hull of points sorted by x."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or below the chord a -> i
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


def iron_curve(d: ValueDistribution, M: int = 1000) -> IronedCurve:
    """Ironed virtual value via the concave hull of the revenue curve R(q) = q F^-1(1-q).

    Grid points are spaced evenly in value between the support floor and
    ``d.upper`` (for the uniform family this coincides with even quantile
    spacing). The ironed virtual value is the hull slope dR/dq, which is
    nondecreasing in value.
    """
    if M < 2:
        raise ValueError("iron_curve needs M >= 2")
    lo = getattr(d, "lo", 0.0)
    values = np.linspace(lo, d.upper, M)
    q = 1.0 - d.cdf(values)          # descending in value
    rev = q * values
    # hull is built on q ascending
    qa, ra = q[::-1], rev[::-1]
    idx = _upper_hull(qa, ra)
    hull_rev = np.interp(qa, qa[idx], ra[idx])
    slope = np.gradient(hull_rev, qa, edge_order=2)
    phi = slope[::-1]
    phi = np.maximum.accumulate(phi)  # round-off only; the hull slope is already monotone
    return IronedCurve(quantiles=q, values=values, phi_values=phi)


def to_dict(d: ValueDistribution) -> dict:
    return {"kind": d.kind, "params": [float(p) for p in d.params]}


def from_dict(obj: dict) -> ValueDistribution:
    kind, params = obj.get("kind"), obj.get("params", [])
    if kind == "uniform":
        return Uniform(*params)
    if kind == "exponential":
        return Exponential(*params)
    raise ValueError(f"unknown distribution kind {kind!r}")
