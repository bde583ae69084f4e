import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgecache.netmodel import Instance, Topology, generate_instance, generate_topology  # noqa: E402


@pytest.fixture(scope="session")
def table2_topology():
    return generate_topology(1)


@pytest.fixture
def small_instance(table2_topology):
    return generate_instance(3, table2_topology, 5)


def make_instance(topology, s, b, p, w, c, alpha=1.0, beta=1.0):
    return Instance(topology, np.asarray(s, float), np.asarray(b, float),
                    np.asarray(p, float), np.asarray(w, float), np.asarray(c, float),
                    alpha, beta)


def random_small_instance(seed):
    """|K|<=3, |A|<=4, |E|<=3, |L|<=6 with capacities tight enough to bind."""
    rng = np.random.default_rng(seed)
    num_ars = int(rng.integers(1, 5))
    num_routers = int(rng.integers(0, 3))
    n = num_ars + num_routers
    if n < 2:
        num_routers, n = 1, num_ars + 1
    max_links = min(6, n * (n - 1) // 2)
    num_links = int(rng.integers(n - 1, max_links + 1))
    num_ecs = int(rng.integers(1, min(3, n) + 1))
    topo = generate_topology(int(rng.integers(1 << 30)), num_ars=num_ars, num_ecs=num_ecs,
                             num_links=num_links, num_routers=num_routers,
                             n_backhaul=int(rng.integers(3, 13)))
    K = int(rng.integers(1, 4))
    base = generate_instance(int(rng.integers(1 << 30)), topo, K)
    w = rng.uniform(35, 120, size=num_ecs)
    c = rng.uniform(3, 18, size=num_links)
    return Instance(topo, base.s, base.b, base.p, w, c,
                    alpha=float(rng.uniform(0.2, 2)), beta=float(rng.uniform(0.2, 2)))


def path_topology():
    """a1 - r1 - e1"""
    return Topology(3, ((0, 1), (1, 2)), (0,), (2,))


class FixedModel:
    """Stand-in classifier returning the same row for every image."""

    def __init__(self, row):
        self.row = np.asarray(row, dtype=float)
        self.calls = 0

    def predict(self, pixels):
        self.calls += 1
        return self.row[None, :]
