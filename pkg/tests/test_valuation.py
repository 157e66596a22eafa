import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgalab.valuation import (Exponential, OutOfSupportError, Uniform, bid_virtual_value, dist_eval, from_dict,
                              iron_curve, sample, to_dict, virtual_value, virtual_value_coeffs)


def test_dist_eval_examples():
    assert dist_eval(Uniform(0, 1), 0.3) == pytest.approx((1.0, 0.3))
    assert dist_eval(Exponential(2.0), 0.0) == pytest.approx((2.0, 0.0))
    assert dist_eval(Uniform(0, 1), 1.5) == pytest.approx((0.0, 1.0))


def test_sample_means():
    rng = np.random.default_rng(0)
    assert abs(sample(Uniform(), rng, 100_000).mean() - 0.5) < 0.01
    assert abs(sample(Exponential(1.0), rng, 100_000).mean() - 1.0) < 0.02


def test_sample_deterministic():
    a = sample(Exponential(), np.random.default_rng(5), 10)
    b = sample(Exponential(), np.random.default_rng(5), 10)
    assert np.array_equal(a, b)


def test_virtual_value_examples():
    assert virtual_value(Uniform(0, 1), 0.5) == pytest.approx(0.0)
    assert virtual_value(Uniform(0, 1), 0.75) == pytest.approx(0.5)
    assert virtual_value(Exponential(1.0), 1.0) == pytest.approx(0.0)


def test_virtual_value_out_of_support():
    with pytest.raises(OutOfSupportError):
        virtual_value(Uniform(0, 1), 1.2)
    with pytest.raises(OutOfSupportError):
        virtual_value(Exponential(), -0.1)
    # bids may leave the support; the closed form extends there
    assert bid_virtual_value(Uniform(0, 1), 1.2) == pytest.approx(1.4)


@pytest.mark.parametrize("d", [Uniform(0, 1), Uniform(0.5, 2.0), Exponential(1.0), Exponential(3.0)])
def test_coeffs_match_closed_form(d):
    slope, icept = virtual_value_coeffs(d)
    v = np.linspace(0.0 if d.kind == "exponential" else d.lo, d.upper, 11)
    assert np.allclose(slope * v + icept, virtual_value(d, v))


def test_ironing_uniform():
    curve = iron_curve(Uniform(0, 1), 1000)
    assert np.max(np.abs(curve(curve.values) - (2 * curve.values - 1))) < 5e-3


def test_ironing_exponential():
    d = Exponential(1.0)
    curve = iron_curve(d, 1000)
    v = curve.values[curve.values <= d.ppf(0.999)]
    assert np.max(np.abs(curve(v) - (v - 1.0))) < 5e-3


@pytest.mark.parametrize("d", [Uniform(0, 1), Uniform(1, 3), Exponential(0.5)])
def test_ironed_curve_monotone(d):
    assert np.all(np.diff(iron_curve(d, 300).phi_values) >= 0)


@given(st.floats(0.0, 1.0))
def test_phi_below_value_and_monotone(v):
    for d in (Uniform(0, 1), Exponential(1.0)):
        assert virtual_value(d, v) <= v
        assert virtual_value(d, v) <= virtual_value(d, v + 1e-3) if d.in_support(v + 1e-3) else True


@pytest.mark.parametrize("d,r", [(Uniform(0, 1), 0.3), (Uniform(0, 1), 0.6), (Exponential(1.0), 0.8)])
def test_posted_price_revenue_identity(d, r):
    # E[phi(v) 1{v >= r}] = r (1 - F(r)) for one bidder facing posted price r
    v = sample(d, np.random.default_rng(1), 100_000)
    mc = np.mean(virtual_value(d, v) * (v >= r))
    exact = r * (1 - d.cdf(r))
    assert abs(mc - exact) / exact < 0.01


def test_dict_roundtrip():
    for d in (Uniform(0.2, 1.5), Exponential(2.0)):
        assert from_dict(to_dict(d)) == d
    with pytest.raises(ValueError):
        from_dict({"kind": "pareto", "params": [1.0]})
    with pytest.raises(ValueError):
        Uniform(1.0, 0.5)
    with pytest.raises(ValueError):
        Exponential(0.0)
