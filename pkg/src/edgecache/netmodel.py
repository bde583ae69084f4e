"""Network graph, hop/incidence tables and random problem instances.

A topology is an undirected graph whose nodes are integers ``0..num_nodes-1``.
Access routers (ARs) and edge clouds (ECs) are subsets of the nodes and may
overlap.  For each (AR, EC) pair a single canonical shortest path is fixed;
its length is the hop count ``N_ae`` and its links make up ``B_lae``.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

DEFAULT_N_BACKHAUL = 12
MAX_DEGREE = 5

# Uniform sampling ranges for generated instances.
S_RANGE = (10.0, 50.0)  # MB
B_RANGE = (1.0, 10.0)  # Mbps
W_RANGE = (100.0, 500.0)  # MB
C_RANGE = (50.0, 100.0)  # Mbps

# Storage capacity used when an EC should never be the binding resource.
UNBOUNDED_STORAGE = 1e9


class DisconnectedError(ValueError):
    pass


def _frozen(a, dtype=None):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _adjacency(num_nodes, links):
    adj = [[] for _ in range(num_nodes)]
    for u, v in links:
        adj[u].append(v)
        adj[v].append(u)
    for nbrs in adj:
        nbrs.sort()
    return adj


def _bfs(adj, source):
    dist = [-1] * len(adj)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_hops(num_nodes, links, ar_ids, ec_ids):
    """Hop counts and link-path incidence for every (AR, EC) pair.

    The path chosen for a pair is the lexicographically smallest node
    sequence among all shortest paths from the AR to the EC.

    Returns
    -------
    hops : ndarray, shape (|A|, |E|)
    incidence : ndarray, shape (|L|, |A|, |E|), 0/1
    paths : dict mapping (a_idx, e_idx) to the node sequence
    """
    adj = _adjacency(num_nodes, links)
    link_index = {frozenset(l): i for i, l in enumerate(links)}
    hops = np.zeros((len(ar_ids), len(ec_ids)), dtype=np.int64)
    incidence = np.zeros((len(links), len(ar_ids), len(ec_ids)), dtype=np.uint8)
    paths = {}
    for ei, e in enumerate(ec_ids):
        to_e = _bfs(adj, e)
        for ai, a in enumerate(ar_ids):
            if to_e[a] < 0:
                raise DisconnectedError(f"AR {a} cannot reach EC {e}")
            # Greedy walk towards e picking the smallest admissible neighbour
            # yields the lexicographically smallest shortest path.
            path = [a]
            node = a
            while node != e:
                node = next(v for v in adj[node] if to_e[v] == to_e[node] - 1)
                path.append(node)
            hops[ai, ei] = len(path) - 1
            for u, v in zip(path, path[1:]):
                incidence[link_index[frozenset((u, v))], ai, ei] = 1
            paths[ai, ei] = tuple(path)
    return hops, incidence, paths


@dataclass(frozen=True)
class Topology:
    num_nodes: int
    links: tuple
    ar_ids: tuple
    ec_ids: tuple
    n_backhaul: int = DEFAULT_N_BACKHAUL
    hop_matrix: np.ndarray = field(init=False, repr=False, compare=False)
    incidence: np.ndarray = field(init=False, repr=False, compare=False)
    paths: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        links = tuple(tuple(int(n) for n in l) for l in self.links)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "ar_ids", tuple(int(a) for a in self.ar_ids))
        object.__setattr__(self, "ec_ids", tuple(int(e) for e in self.ec_ids))
        n = self.num_nodes
        for u, v in links:
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ValueError(f"invalid link ({u}, {v})")
        if len({frozenset(l) for l in links}) != len(links):
            raise ValueError("duplicate links")
        for node in self.ar_ids + self.ec_ids:
            if not 0 <= node < n:
                raise ValueError(f"node id {node} out of range")
        if self.n_backhaul <= 0:
            raise ValueError("n_backhaul must be positive")
        hops, inc, paths = shortest_hops(n, links, self.ar_ids, self.ec_ids)
        hops.setflags(write=False)
        inc.setflags(write=False)
        object.__setattr__(self, "hop_matrix", hops)
        object.__setattr__(self, "incidence", inc)
        object.__setattr__(self, "paths", paths)

    @property
    def num_ars(self):
        return len(self.ar_ids)

    @property
    def num_ecs(self):
        return len(self.ec_ids)

    @property
    def num_links(self):
        return len(self.links)

    def degrees(self):
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        for u, v in self.links:
            deg[u] += 1
            deg[v] += 1
        return deg

    def path_links(self, a_idx, e_idx):
        """Link ids on the canonical path from AR ``a_idx`` to EC ``e_idx``."""
        return tuple(np.flatnonzero(self.incidence[:, a_idx, e_idx]))


@dataclass(frozen=True)
class UtilizationView:
    q: np.ndarray  # (K, E) storage share s_k / w_e
    r: np.ndarray  # (K, L) bandwidth share b_k / c_l


@dataclass(frozen=True, eq=False)
class Instance:
    """One caching problem: a topology plus per-flow demands and capacities."""

    topology: Topology
    s: np.ndarray  # (K,) storage demand, MB
    b: np.ndarray  # (K,) bandwidth demand, Mbps
    p: np.ndarray  # (K, A) attachment probabilities
    w: np.ndarray  # (E,) EC storage, MB
    c: np.ndarray  # (L,) link capacity, Mbps
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        topo = self.topology
        for name in ("s", "b", "p", "w", "c"):
            object.__setattr__(self, name, _frozen(getattr(self, name), float))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        K = self.s.shape[0]
        if K < 1:
            raise ValueError("an instance needs at least one flow")
        if self.s.shape != (K,) or self.b.shape != (K,):
            raise ValueError("s and b must both have one entry per flow")
        if self.p.shape != (K, topo.num_ars):
            raise ValueError(f"p must have shape {(K, topo.num_ars)}, got {self.p.shape}")
        if self.w.shape != (topo.num_ecs,) or self.c.shape != (topo.num_links,):
            raise ValueError("w/c must have one entry per EC/link")
        for name in ("s", "b", "w", "c"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"{name} must be strictly positive")
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise ValueError("p entries must lie in [0, 1]")
        if np.any(self.p.sum(axis=1) > 1 + 1e-9):
            raise ValueError("p rows must sum to at most 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")

    @property
    def num_flows(self):
        return self.s.shape[0]

    @property
    def shape(self):
        """(|K|, |A|, |E|, |L|)"""
        t = self.topology
        return self.num_flows, t.num_ars, t.num_ecs, t.num_links

    def subset(self, flows):
        """Instance restricted to the given flow indices (same network)."""
        flows = list(flows)
        return Instance(self.topology, self.s[flows], self.b[flows], self.p[flows],
                        self.w, self.c, self.alpha, self.beta)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return instance_to_dict(self) == instance_to_dict(other)


def utilization(instance):
    return UtilizationView(q=np.divide.outer(instance.s, instance.w),
                           r=np.divide.outer(instance.b, instance.c))


def _max_links(num_nodes):
    return min(num_nodes * (num_nodes - 1) // 2, MAX_DEGREE * num_nodes // 2)


def generate_topology(seed, num_ars=7, num_ecs=6, num_links=20, num_routers=6,
                      n_backhaul=DEFAULT_N_BACKHAUL, max_attempts=200):
    """Random mesh tree-like topology.

    A random spanning tree is grown over all nodes, then random chords are
    added until ``num_links`` links exist.  No node may exceed degree 5.
    ARs are nodes ``0..num_ars-1``; the remaining nodes are plain routers.
    ECs are drawn without replacement from all nodes.
    """
    n = num_ars + num_routers
    if num_ars < 1 or num_ecs < 1:
        raise ValueError("need at least one AR and one EC")
    if n < 2:
        raise ValueError("need at least two nodes")
    if num_links < n - 1:
        raise ValueError(f"{num_links} links cannot connect {n} nodes")
    if num_links > _max_links(n):
        raise ValueError(f"{num_links} links exceed the degree-{MAX_DEGREE} limit for {n} nodes")
    if num_ecs > n:
        raise ValueError(f"cannot place {num_ecs} ECs on {n} nodes")

    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        links = _random_links(rng, n, num_links)
        if links is not None:
            break
    else:
        raise ValueError("could not build a topology within the degree limit")
    ec_ids = sorted(int(e) for e in rng.choice(n, size=num_ecs, replace=False))
    return Topology(n, tuple(links), tuple(range(num_ars)), tuple(ec_ids), n_backhaul)


def _random_links(rng, n, num_links):
    deg = [0] * n
    order = [int(v) for v in rng.permutation(n)]
    links = []
    present = set()
    for i in range(1, n):
        hosts = [u for u in order[:i] if deg[u] < MAX_DEGREE]
        if not hosts:
            return None
        u = hosts[int(rng.integers(len(hosts)))]
        v = order[i]
        links.append((min(u, v), max(u, v)))
        present.add(frozenset((u, v)))
        deg[u] += 1
        deg[v] += 1
    while len(links) < num_links:
        cands = [(u, v) for u, v in itertools.combinations(range(n), 2)
                 if deg[u] < MAX_DEGREE and deg[v] < MAX_DEGREE
                 and frozenset((u, v)) not in present]
        if not cands:
            return None
        u, v = cands[int(rng.integers(len(cands)))]
        links.append((u, v))
        present.add(frozenset((u, v)))
        deg[u] += 1
        deg[v] += 1
    return links


def generate_instance(seed, topology, num_flows, alpha=1.0, beta=1.0):
    """Draw demands and capacities uniformly from the experimental ranges."""
    if num_flows < 1:
        raise ValueError("num_flows must be >= 1")
    rng = np.random.default_rng(seed)
    K, A, E, L = num_flows, topology.num_ars, topology.num_ecs, topology.num_links
    s = rng.uniform(*S_RANGE, size=K)
    b = rng.uniform(*B_RANGE, size=K)
    w = rng.uniform(*W_RANGE, size=E)
    c = rng.uniform(*C_RANGE, size=L)
    p = rng.uniform(0.0, 1.0, size=(K, A))
    p /= p.sum(axis=1, keepdims=True)
    return Instance(topology, s, b, p, w, c, alpha, beta)


def _partition_gap(values):
    """Smallest nonzero |sum(S1) - sum(S2)| over all two-way splits."""
    total = sum(values)
    best = np.inf
    for mask in range(1 << (len(values) - 1)):
        part = sum(v for i, v in enumerate(values) if mask >> i & 1)
        gap = abs(total - 2 * part)
        if 1e-12 < gap < best:
            best = gap
    return best


def appendix_a_instance(flow_bandwidths, n_backhaul=DEFAULT_N_BACKHAUL, s_mb=1.0):
    """Two-EC, one-AR gadget whose full-service placements are set partitions.

    Nodes: ``0 = e1``, ``1 = e2``, ``2 = a1``; links ``l1 = (e1, a1)`` and
    ``l2 = (e2, a1)``.  Storage is effectively unbounded and every flow
    attaches to ``a1`` with probability one.  Both links get capacity
    ``sum(b)/2 + nu`` so that serving every flow needs a balanced split.

    ``nu`` is ``min(b)/4``, shrunk further when some unbalanced split would
    otherwise fit under the capacity.
    """
    b = [float(v) for v in flow_bandwidths]
    if not b:
        raise ValueError("need at least one flow bandwidth")
    if min(b) <= 0:
        raise ValueError("bandwidths must be positive")
    nu = min(b) / 4
    if len(b) <= 16:
        nu = min(nu, _partition_gap(b) / 4)
    cap = sum(b) / 2 + nu
    topo = Topology(3, ((0, 2), (1, 2)), (2,), (0, 1), n_backhaul)
    K = len(b)
    return Instance(topo, np.full(K, s_mb), np.array(b), np.ones((K, 1)),
                    np.full(2, UNBOUNDED_STORAGE), np.full(2, cap))


# -- JSON ---------------------------------------------------------------------

def topology_to_dict(topology):
    return {
        "format_version": FORMAT_VERSION,
        "nodes": topology.num_nodes,
        "links": [list(l) for l in topology.links],
        "ar_ids": list(topology.ar_ids),
        "ec_ids": list(topology.ec_ids),
        "n_backhaul": topology.n_backhaul,
    }


def topology_from_dict(d):
    _check_version(d)
    return Topology(d["nodes"], tuple(tuple(l) for l in d["links"]),
                    tuple(d["ar_ids"]), tuple(d["ec_ids"]), d["n_backhaul"])


def instance_to_dict(instance):
    d = topology_to_dict(instance.topology)
    d["flows"] = [{"s_mb": float(s), "b_mbps": float(b), "p": [float(v) for v in p]}
                  for s, b, p in zip(instance.s, instance.b, instance.p)]
    d["w_mb"] = [float(v) for v in instance.w]
    d["c_mbps"] = [float(v) for v in instance.c]
    d["alpha"] = instance.alpha
    d["beta"] = instance.beta
    return d


def instance_from_dict(d):
    topo = topology_from_dict(d)
    flows = d["flows"]
    return Instance(topo,
                    [f["s_mb"] for f in flows], [f["b_mbps"] for f in flows],
                    [f["p"] for f in flows], d["w_mb"], d["c_mbps"],
                    d["alpha"], d["beta"])


def _check_version(d):
    version = d.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {version}")


def dumps(obj):
    """Serialize a Topology or Instance to canonical JSON text."""
    d = instance_to_dict(obj) if isinstance(obj, Instance) else topology_to_dict(obj)
    return json.dumps(d, indent=1, sort_keys=True)


def load_instance(text):
    return instance_from_dict(json.loads(text))


def load_topology(text):
    return topology_from_dict(json.loads(text))
