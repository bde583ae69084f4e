"""Cost model and constraint checks for a caching placement.

Arrays follow one shape convention throughout the package:

* ``x`` -- (K, E) placement, ``x[k, e] = 1`` when flow k is cached on EC e
* ``z`` -- (K, A, E) routing, flow k attached at AR a is served from EC e
* ``y`` -- (K, L) link usage of flow k
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import utilization

# Caching cost reported once an EC reaches full utilization.
OVERFLOW_COST = 1e12
# Slack on utilizations when checking strict capacity inequalities.
SLACK = 1e-9
DEFAULT_GAMMA = 100.0

PENALTY_MODES = ("aggregate", "per_resource")

# Constraint tags used in violation reports.
ONE_EC_PER_FLOW = "one_ec_per_flow"
EC_STORAGE = "ec_storage"
LINK_BANDWIDTH = "link_bandwidth"
UNIQUE_PATH = "unique_path"
SERVE_FROM_CACHE = "serve_from_cache"
LINK_ON_PATH = "link_on_path"
PATH_USES_LINK = "path_uses_link"
BINARY = "binary"


class IncompleteAssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Routing:
    z: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class Violation:
    constraint: str
    where: tuple
    detail: str = ""

    def to_dict(self):
        return {"constraint": self.constraint, "where": list(self.where), "detail": self.detail}


@dataclass
class Solution:
    x: np.ndarray
    routing: Routing
    objective: float
    feasible: bool
    penalty_score: float
    violations: list = field(default_factory=list)

    @property
    def z(self):
        return self.routing.z

    @property
    def y(self):
        return self.routing.y

    def placement(self):
        """EC index per flow, -1 for unassigned flows."""
        return np.where(self.x.any(axis=1), self.x.argmax(axis=1), -1)

    def to_dict(self):
        return {
            "x": self.x.astype(int).tolist(),
            "z": self.z.astype(int).tolist(),
            "y": self.y.astype(int).tolist(),
            "objective": float(self.objective),
            "penalty_score": float(self.penalty_score),
            "feasible": bool(self.feasible),
            "violations": [v.to_dict() for v in self.violations],
        }

    @classmethod
    def from_dict(cls, d):
        x = np.array(d["x"], dtype=np.int8)
        routing = Routing(np.array(d["z"], dtype=np.int8), np.array(d["y"], dtype=np.int8))
        violations = [Violation(v["constraint"], tuple(v["where"]), v.get("detail", ""))
                      for v in d["violations"]]
        return cls(x, routing, d["objective"], d["feasible"], d["penalty_score"], violations)


def ec_loads(instance, x):
    return instance.s @ x


def link_loads(instance, y):
    return instance.b @ y


def caching_cost(instance, x, allow_partial=False):
    """Load-balancing caching cost: each cached flow pays ``1/(1-u_e)``.

    Returns :data:`OVERFLOW_COST` when any EC is at or above full
    utilization.  Rows of ``x`` must be one-hot unless ``allow_partial``,
    in which case all-zero rows (unserved flows) contribute nothing.
    """
    x = np.asarray(x)
    per_row = x.sum(axis=1)
    if np.any(per_row > 1) or (not allow_partial and np.any(per_row != 1)):
        raise IncompleteAssignmentError("every flow must be placed on exactly one EC")
    u = ec_loads(instance, x) / instance.w
    if np.any(u >= 1 - SLACK):
        return OVERFLOW_COST
    t = 1.0 / (1.0 - u)
    return float(x.sum(axis=0) @ t)


def transmission_cost(instance, z):
    """Expected hop count: cache hits over the AR-EC path, misses over the backhaul."""
    z = np.asarray(z)
    N = instance.topology.hop_matrix
    NT = instance.topology.n_backhaul
    hit = np.einsum("ka,kae->k", instance.p, z)
    hops = np.einsum("ka,kae,ae->", instance.p, z, N)
    return float(hops + np.sum(1.0 - hit) * NT)


def total_cost(instance, x, z, allow_partial=False):
    cc = caching_cost(instance, x, allow_partial=allow_partial)
    ct = transmission_cost(instance, z)
    return instance.alpha * cc + instance.beta * ct


def _links_used(instance, z):
    """(K, L) count of served paths crossing each link."""
    return np.einsum("lae,kae->kl", instance.topology.incidence.astype(np.int64), z)


def check_feasibility(instance, x, z, y):
    """All violated constraints of the placement problem (empty when feasible)."""
    x, z, y = np.asarray(x), np.asarray(z), np.asarray(y)
    out = []
    for name, arr in (("x", x), ("z", z), ("y", y)):
        bad = np.argwhere((arr != 0) & (arr != 1))
        out.extend(Violation(BINARY, (name,) + tuple(int(i) for i in idx)) for idx in bad)
    for k in np.flatnonzero(x.sum(axis=1) != 1):
        out.append(Violation(ONE_EC_PER_FLOW, (int(k),), f"{int(x[k].sum())} ECs"))
    used = ec_loads(instance, x)
    for e in np.flatnonzero(used / instance.w >= 1 - SLACK):
        out.append(Violation(EC_STORAGE, (int(e),),
                             f"{used[e]:.6g} MB stored, capacity {instance.w[e]:.6g} MB"))
    bw = link_loads(instance, y)
    for l in np.flatnonzero(bw / instance.c >= 1 - SLACK):
        out.append(Violation(LINK_BANDWIDTH, (int(l),),
                             f"{bw[l]:.6g} Mbps carried, capacity {instance.c[l]:.6g} Mbps"))
    for k, a in np.argwhere(z.sum(axis=2) > 1):
        out.append(Violation(UNIQUE_PATH, (int(k), int(a))))
    for k, a, e in np.argwhere(z > x[:, None, :]):
        out.append(Violation(SERVE_FROM_CACHE, (int(k), int(a), int(e))))
    crossing = _links_used(instance, z)
    for k, l in np.argwhere((y > 0) & (crossing == 0)):
        out.append(Violation(LINK_ON_PATH, (int(k), int(l))))
    for k, l in np.argwhere((y == 0) & (crossing > 0)):
        out.append(Violation(PATH_USES_LINK, (int(k), int(l))))
    return out


def penalty_score(instance, x, z, y, gamma=DEFAULT_GAMMA, mode="aggregate"):
    """Total cost plus a penalty for exceeding storage or bandwidth.

    ``mode="aggregate"`` sums utilization over all ECs (and over all links)
    before comparing against one, exactly as the scoring rule is written.
    ``mode="per_resource"`` penalizes each overloaded EC or link separately,
    so a feasible solution always scores its plain total cost.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    x, y = np.asarray(x), np.asarray(y)
    view = utilization(instance)
    if mode == "aggregate":
        store = float(np.sum(view.q * x)) - 1.0
        band = float(np.sum(view.r * y)) - 1.0
        excess = max(0.0, store, band, store + band)
    elif mode == "per_resource":
        u = np.sum(view.q * x, axis=0) - 1.0
        v = np.sum(view.r * y, axis=0) - 1.0
        excess = float(np.sum(np.maximum(u, 0.0)) + np.sum(np.maximum(v, 0.0)))
    else:
        raise ValueError(f"unknown penalty mode {mode!r}")
    return gamma * excess + total_cost(instance, x, z, allow_partial=True)


def routing_links(instance, z):
    """Link usage implied by a routing: a flow occupies every link on its served paths."""
    return (_links_used(instance, z) > 0).astype(np.int8)


def complete_routing(instance, x, p_min=0.0):
    """Serve every AR whose attachment probability exceeds ``p_min``."""
    x = np.asarray(x, dtype=np.int8)
    attach = (instance.p > p_min).astype(np.int8)
    z = attach[:, :, None] * x[:, None, :]
    return Routing(z, routing_links(instance, z))


def evaluate(instance, x, routing=None, gamma=DEFAULT_GAMMA, penalty_mode="aggregate"):
    """Build a :class:`Solution` for ``x`` (routing completed if not given)."""
    x = np.asarray(x, dtype=np.int8)
    if routing is None:
        routing = complete_routing(instance, x)
    violations = check_feasibility(instance, x, routing.z, routing.y)
    objective = total_cost(instance, x, routing.z, allow_partial=True)
    score = penalty_score(instance, x, routing.z, routing.y, gamma, penalty_mode)
    return Solution(x, routing, objective, not violations, score, violations)
