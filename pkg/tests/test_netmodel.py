import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import path_topology
from edgecache import netmodel
from edgecache.netmodel import (
    DisconnectedError, Topology, appendix_a_instance, generate_instance,
    generate_topology, utilization,
)


def test_path_graph_hops_and_incidence():
    topo = path_topology()
    assert topo.hop_matrix.tolist() == [[2]]
    assert topo.incidence[:, 0, 0].tolist() == [1, 1]


def test_colocated_ar_and_ec():
    topo = Topology(2, ((0, 1),), (0,), (0,))
    assert topo.hop_matrix[0, 0] == 0
    assert topo.incidence.sum() == 0


def test_four_cycle_tie_break():
    # 0-1-2-3-0; AR 0 to EC 2 has paths [0,1,2] and [0,3,2]; the first wins.
    topo = Topology(4, ((0, 1), (1, 2), (2, 3), (3, 0)), (0,), (2,))
    assert topo.hop_matrix[0, 0] == 2
    assert topo.paths[0, 0] == (0, 1, 2)
    assert topo.incidence[:, 0, 0].tolist() == [1, 1, 0, 0]


def test_disconnected_pair_is_named():
    with pytest.raises(DisconnectedError, match="AR 0 cannot reach EC 3"):
        Topology(4, ((0, 1), (2, 3)), (0,), (3,))


def test_default_topology_matches_table2_sizes(table2_topology):
    t = table2_topology
    assert (t.num_ars, t.num_ecs, t.num_links) == (7, 6, 20)
    deg = t.degrees()
    assert deg.min() >= 1 and deg.max() <= 5


def test_topology_determinism():
    assert netmodel.dumps(generate_topology(1)) == netmodel.dumps(generate_topology(1))
    assert netmodel.dumps(generate_topology(1)) != netmodel.dumps(generate_topology(2))


@pytest.mark.parametrize("kwargs", [
    dict(num_links=5),  # 13 nodes need 12 links
    dict(num_links=40),  # degree cap
    dict(num_ecs=20),
])
def test_generate_topology_rejects_bad_counts(kwargs):
    with pytest.raises(ValueError):
        generate_topology(0, **kwargs)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), ars=st.integers(1, 8), routers=st.integers(0, 6),
       extra=st.integers(0, 8))
def test_generated_topology_invariants(seed, ars, routers, extra):
    n = ars + routers
    if n < 2:
        return
    links = min(n - 1 + extra, netmodel._max_links(n))
    topo = generate_topology(seed, num_ars=ars, num_ecs=min(3, n), num_links=links,
                             num_routers=routers)
    deg = topo.degrees()
    assert deg.min() >= 1 and deg.max() <= 5
    assert np.array_equal(topo.incidence.sum(axis=0), topo.hop_matrix)
    assert np.all((topo.hop_matrix == 0) ==
                  (np.array(topo.ar_ids)[:, None] == np.array(topo.ec_ids)[None, :]))
    # undirected graph: distance from the EC side agrees
    adj = netmodel._adjacency(topo.num_nodes, topo.links)
    for ai, a in enumerate(topo.ar_ids):
        for ei, e in enumerate(topo.ec_ids):
            assert netmodel._bfs(adj, a)[e] == netmodel._bfs(adj, e)[a] == topo.hop_matrix[ai, ei]


def test_incidence_marks_a_real_path(table2_topology):
    t = table2_topology
    for (ai, ei), path in t.paths.items():
        assert path[0] == t.ar_ids[ai] and path[-1] == t.ec_ids[ei]
        marked = {t.links[l] for l in t.path_links(ai, ei)}
        assert marked == {tuple(sorted(uv)) for uv in zip(path, path[1:])} or \
            {frozenset(l) for l in marked} == {frozenset(uv) for uv in zip(path, path[1:])}


def test_generated_instance_ranges(table2_topology):
    inst = generate_instance(11, table2_topology, 50)
    assert np.all((inst.s >= 10) & (inst.s <= 50))
    assert np.all((inst.b >= 1) & (inst.b <= 10))
    assert np.all((inst.w >= 100) & (inst.w <= 500))
    assert np.all((inst.c >= 50) & (inst.c <= 100))
    np.testing.assert_allclose(inst.p.sum(axis=1), 1.0, atol=1e-9)


def test_instance_determinism(table2_topology):
    a = netmodel.dumps(generate_instance(7, table2_topology, 5))
    b = netmodel.dumps(generate_instance(7, table2_topology, 5))
    assert a == b


def test_generate_instance_needs_a_flow(table2_topology):
    with pytest.raises(ValueError):
        generate_instance(0, table2_topology, 0)


def test_instance_json_round_trip_is_lossless(table2_topology):
    inst = generate_instance(5, table2_topology, 7, alpha=0.1 + 0.2, beta=1 / 3)
    text = netmodel.dumps(inst)
    back = netmodel.load_instance(text)
    assert back == inst
    for name in ("s", "b", "p", "w", "c"):
        assert np.array_equal(getattr(back, name), getattr(inst, name))
    assert back.alpha == inst.alpha and back.beta == inst.beta
    d = json.loads(text)
    assert set(d) >= {"nodes", "links", "ar_ids", "ec_ids", "n_backhaul", "flows",
                      "w_mb", "c_mbps", "alpha", "beta"}
    assert set(d["flows"][0]) == {"s_mb", "b_mbps", "p"}


def test_topology_json_round_trip(table2_topology):
    back = netmodel.load_topology(netmodel.dumps(table2_topology))
    assert back == table2_topology
    assert np.array_equal(back.incidence, table2_topology.incidence)


def test_version_guard(table2_topology):
    d = netmodel.topology_to_dict(table2_topology)
    d["format_version"] = 99
    with pytest.raises(ValueError, match="format_version"):
        netmodel.topology_from_dict(d)


@pytest.mark.parametrize("b, cap", [([2, 2], 2.5), ([3, 1, 1, 1], 3.25), ([3, 1], 2.25)])
def test_partition_gadget_capacities(b, cap):
    inst = appendix_a_instance(b)
    np.testing.assert_allclose(inst.c, [cap, cap])
    assert inst.topology.hop_matrix.tolist() == [[1, 1]]
    assert inst.p.tolist() == [[1.0]] * len(b)
    assert np.all(inst.w == netmodel.UNBOUNDED_STORAGE)


def test_partition_gadget_shrinks_slack_below_imbalance():
    # {3} vs {4} differs by 1; min(b)/4 = 0.75 would let that split fit.
    inst = appendix_a_instance([3, 4])
    assert inst.c[0] <= 3.5 + 0.5 / 2


def test_partition_gadget_needs_flows():
    with pytest.raises(ValueError):
        appendix_a_instance([])


def test_utilization_division():
    topo = path_topology()
    from conftest import make_instance
    inst = make_instance(topo, [50], [10], [[1.0]], [100], [50, 80])
    view = utilization(inst)
    assert view.q[0, 0] == 0.5
    assert view.r[0, 0] == 0.2
    assert view.r[0, 1] == 10 / 80


def test_utilization_ranges_follow_sampling_bounds(table2_topology):
    # q in [10/500, 50/100], r in [1/100, 10/50]
    for seed in range(20):
        view = utilization(generate_instance(seed, table2_topology, 10))
        assert view.q.min() >= 0.02 and view.q.max() <= 0.5
        assert view.r.min() >= 0.01 and view.r.max() <= 0.2


def test_instance_rejects_bad_probabilities():
    from conftest import make_instance
    with pytest.raises(ValueError):
        make_instance(path_topology(), [1], [1], [[1.5]], [10], [10, 10])
    with pytest.raises(ValueError):
        make_instance(path_topology(), [0], [1], [[1.0]], [10], [10, 10])


def test_instance_is_immutable(small_instance):
    with pytest.raises(ValueError):
        small_instance.s[0] = 1.0
