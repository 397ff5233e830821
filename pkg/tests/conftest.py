import numpy as np
import pytest
from hypothesis import settings

from monostencil.domain import make_domain
from monostencil.pointcloud import generate_cloud
from monostencil.stencil.calibration import default_table, searching_delta

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cloud_factory():
    """Memoised proper clouds keyed by (domain, h, rho)."""
    cache = {}

    def make(name, h, rho=1.0, skip=20):
        key = (name, h, rho, skip)
        if key not in cache:
            dom = make_domain(name)
            delta0 = searching_delta(h, rho, default_table(dom.dim))
            cache[key] = (dom, generate_cloud(dom, h, delta0, skip=skip))
        return cache[key]
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
