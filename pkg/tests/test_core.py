import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgalab.core import Allocation, Outcome, check_feasible, revenue, utility


def test_feasibility_examples(instance_factory):
    inst = instance_factory(n=3, k=2)
    assert check_feasible(Allocation([0, 2]), inst)
    assert not check_feasible(Allocation([1, 1]), inst)
    assert not check_feasible(Allocation([0, 3]), inst)
    assert not check_feasible([0], inst)


@pytest.mark.parametrize("n,k", [(1, 1), (3, 2), (4, 4), (5, 3), (6, 2)])
def test_feasible_count_is_partial_permutations(instance_factory, n, k):
    inst = instance_factory(n=n, k=k)
    count = sum(check_feasible(a, inst) for a in itertools.product(range(n + 1), repeat=k))
    assert count == np.prod(range(n - k + 1, n + 1))


def test_utility_examples():
    assert utility(1.0, 0.6, 0.05) == pytest.approx(0.02)
    assert utility(0.7, 0.7, 0.3) == 0
    assert utility(0.8, 0.6, 0.0) == 0


def test_revenue_examples():
    assert revenue(Outcome(Allocation([0, 1]), [0.5, 0.2], [0.1, 0.2])) == pytest.approx(0.09)
    assert revenue(Outcome(Allocation([0, 1]), [0.0, 0.0], [0.3, 0.2])) == 0
    assert revenue(Outcome(Allocation([2]), [0.37], [1.0])) == pytest.approx(0.37)


@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 1)), min_size=1, max_size=6))
def test_revenue_is_bid_welfare_minus_utilities(rows):
    # with value = bid, sum b*theta - sum u = sum p*theta
    k = len(rows)
    bids = np.array([r[0] for r in rows])
    theta = np.array([r[1] for r in rows])
    pay = bids * np.linspace(0.1, 0.9, k)
    out = Outcome(Allocation(range(k)), pay, theta)
    lhs = float(np.sum(bids * theta)) - sum(utility(b, p, t) for b, p, t in zip(bids, pay, theta))
    assert revenue(out) == pytest.approx(lhs, abs=1e-9)


def test_instance_validation(instance_factory):
    with pytest.raises(ValueError):
        instance_factory(n=2, k=3)
    with pytest.raises(ValueError):
        instance_factory(n=2, k=1, bids=[-0.1, 0.5])


def test_mechanism_view_hides_values(instance_factory):
    inst = instance_factory(n=3, k=1, values=[0.1, 0.2, 0.3])
    assert inst.mechanism_view().values is None
    assert inst.values is not None


def test_instance_is_immutable(instance_factory):
    inst = instance_factory()
    with pytest.raises(ValueError):
        inst.bids[0] = 3.0


def test_outcome_rejects_bad_ctr():
    with pytest.raises(ValueError):
        Outcome(Allocation([0]), [0.1], [1.5])


def test_allocation_matrix():
    m = Allocation([2, 0]).as_matrix(3)
    assert m.tolist() == [[0, 1], [0, 0], [1, 0]]
    assert Allocation([2, 0]).slot_of(0) == 1
    assert Allocation([2, 0]).slot_of(1) is None
