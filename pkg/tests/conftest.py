import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cgalab.core import AuctionInstance
from cgalab.valuation import Uniform

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_instance(n=3, k=2, bids=None, values=None, seed=0, pctr=None, d_a=4, d_u=4, uid=0):
    rng = np.random.default_rng(seed)
    bids = rng.random(n) if bids is None else np.asarray(bids, dtype=float)
    return AuctionInstance(user_features=rng.normal(size=d_u), ad_features=rng.normal(size=(n, d_a)),
                           bids=bids, dists=tuple(Uniform() for _ in range(n)), k=k, values=values,
                           pctr=pctr, uid=uid)


@pytest.fixture
def instance_factory():
    return make_instance


def pytest_terminal_summary(terminalreporter):
    from acceptlog import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        ok, detail = RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
