import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FixedModel, make_instance, random_small_instance
from edgecache import cost, policies
from edgecache.cnn import predict_matrix
from edgecache.encoder import encode
from edgecache.netmodel import Topology, generate_instance, generate_topology
from edgecache.solver import solve_exact

WALKTHROUGH = np.array([[0.99, 0.01, 0.0, 0.0],
                 [0.05, 0.2, 0.7, 0.05],
                 [0.3, 0.0, 0.5, 0.2]])


def _random_o(rng, K, E, concentration=0.4):
    return rng.dirichlet(np.full(E, concentration), size=K)


# -- threshold mask -----------------------------------------------------------------

def test_mask_example_row():
    row = [[0.8, 0, 0.15, 0, 0.05, 0]]
    assert policies.threshold_mask(row, 0.1).tolist() == [[1, 0, 1, 0, 0, 0]]
    assert policies.threshold_mask(row, 0.0).tolist() == [[1] * 6]
    assert policies.threshold_mask(row).tolist() == [[1, 0, 1, 0, 1, 0]]


def test_mask_repairs_empty_rows(caplog):
    with caplog.at_level(logging.INFO, logger="edgecache.policies"):
        mask = policies.threshold_mask([[0.3, 0.35, 0.35], [1.0, 0, 0]], 0.5)
    assert mask.tolist() == [[0, 1, 0], [1, 0, 0]]
    assert "flow 0" in caplog.text


def test_mask_rejects_bad_delta():
    for delta in (-0.1, 1.0):
        with pytest.raises(ValueError):
            policies.threshold_mask([[1.0]], delta)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), d1=st.floats(0, 0.99), d2=st.floats(0, 0.99))
def test_mask_shrinks_with_delta(seed, d1, d2):
    lo, hi = sorted((d1, d2))
    o = _random_o(np.random.default_rng(seed), 5, 6)
    m_lo, m_hi = policies.threshold_mask(o, lo), policies.threshold_mask(o, hi)
    # repaired rows keep their argmax, which every lower threshold keeps too
    assert np.all(m_hi <= m_lo)


# -- CNN-rMILP ----------------------------------------------------------------------

def test_rmilp_mask_containing_the_optimum(small_instance):
    best = solve_exact(small_instance)
    o = np.where(best.solution.x == 1, 0.9, 0.02)
    o /= o.sum(axis=1, keepdims=True)
    out = policies.cnn_rmilp(small_instance, o, delta=0.5)
    assert out.objective == pytest.approx(best.objective, abs=1e-12)
    assert not out.fallback_used and out.variable_count < 376


def test_rmilp_falls_back_when_the_mask_is_infeasible():
    topo = Topology(3, ((0, 1), (0, 2)), (0,), (1, 2))
    inst = make_instance(topo, [60, 60], [1, 1], [[1.0], [1.0]], [100, 100], [50, 50])
    out = policies.cnn_rmilp(inst, [[1.0, 0.0], [1.0, 0.0]], delta=0.5)
    assert out.fallback_used and out.feasible
    assert out.objective == pytest.approx(solve_exact(inst).objective)


@pytest.mark.parametrize("seed", range(10))
def test_rmilp_never_beats_the_benchmark(seed):
    inst = random_small_instance(4000 + seed)
    bench = solve_exact(inst)
    if not bench.feasible:
        with pytest.raises(policies.InfeasibleInstanceError):
            policies.cnn_rmilp(inst, np.full(inst.shape[::2], 1.0 / inst.shape[2]))
        return
    o = _random_o(np.random.default_rng(seed), inst.num_flows, inst.shape[2])
    out = policies.cnn_rmilp(inst, o, delta=0.2)
    assert out.feasible
    assert out.objective >= bench.objective - 1e-9


# -- CNN-HCLS -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def walkthrough_instance():
    topo = generate_topology(6, num_ecs=4)
    return generate_instance(6, topo, 3)


def test_walkthrough_initial_state(walkthrough_instance):
    ranked = policies.ranked_candidates(WALKTHROUGH, delta=0.1)
    assert ranked == [[0], [2, 1], [2, 0, 3]]
    assert [WALKTHROUGH[k, r[0]] for k, r in enumerate(ranked)] == [0.99, 0.7, 0.5]
    out = policies.hcls(walkthrough_instance, WALKTHROUGH, delta=0.1)
    assert out.evaluations <= 3 * 4
    _replay(walkthrough_instance, WALKTHROUGH, 0.1, out)


def _replay(inst, o, delta, out, gamma=cost.DEFAULT_GAMMA):
    """Re-apply the move log from the initial state, rescoring every state."""
    ranked = policies.ranked_candidates(o, delta)
    assign = [r[0] for r in ranked]
    K, _, E, _ = inst.shape

    def score(a):
        x = np.zeros((K, E), dtype=int)
        x[np.arange(K), a] = 1
        r = cost.complete_routing(inst, x)
        return cost.penalty_score(inst, x, r.z, r.y, gamma)

    first = score(assign)
    current = first
    for m in out.moves:
        k = m.flow
        assert assign[k] == m.from_ec
        assert ranked[k].index(m.to_ec) == ranked[k].index(m.from_ec) + 1
        assert m.score_before == pytest.approx(current, abs=1e-9)
        assign[k] = m.to_ec
        current = score(assign)
        assert m.score_after == pytest.approx(current, abs=1e-9)
        assert m.score_after < m.score_before
    assert out.x.argmax(axis=1).tolist() == assign
    assert out.penalty_score == pytest.approx(current, abs=1e-9)
    assert out.penalty_score <= first


def test_one_hot_matrix_has_no_successors(small_instance):
    o = np.eye(6)[[3, 1, 4, 1, 5]]
    out = policies.hcls(small_instance, o)
    assert out.moves == [] and out.evaluations == 1
    assert out.x.argmax(axis=1).tolist() == [3, 1, 4, 1, 5]


@pytest.mark.parametrize("seed", range(15))
def test_hcls_replay_on_random_matrices(table2_topology, seed):
    rng = np.random.default_rng(seed)
    inst = generate_instance(100 + seed, table2_topology, 5)
    o = _random_o(rng, 5, 6)
    out = policies.hcls(inst, o, delta=0.01)
    assert out.evaluations <= 5 * 6
    _replay(inst, o, 0.01, out)


def test_hcls_ties_prefer_the_lowest_flow():
    # identical flows on identical ECs: every successor scores the same
    topo = Topology(3, ((0, 1), (0, 2)), (0,), (1, 2))
    inst = make_instance(topo, [50, 50], [1, 1], [[1.0], [1.0]], [100, 100], [50, 50])
    o = np.array([[0.6, 0.4], [0.6, 0.4]])
    out = policies.hcls(inst, o)
    assert [m.flow for m in out.moves] == [0]
    assert out.x.tolist() == [[0, 1], [1, 0]]


def test_hcls_checks_dimensions(small_instance):
    with pytest.raises(ValueError, match="5x6"):
        policies.hcls(small_instance, np.full((4, 6), 1 / 6))


# -- GCA ----------------------------------------------------------------------------

def _line():
    # AR 0 - EC node 1 - EC node 2
    return Topology(3, ((0, 1), (1, 2)), (0,), (1, 2))


def test_gca_nearest_ec():
    inst = make_instance(_line(), [20], [1], [[1.0]], [100, 100], [50, 50])
    assert policies.gca(inst).x.tolist() == [[1, 0]]


def test_gca_skips_a_full_ec():
    inst = make_instance(_line(), [20], [1], [[1.0]], [10, 100], [50, 50])
    assert policies.gca(inst).x.tolist() == [[0, 1]]


def test_gca_first_flow_wins_the_shared_ec():
    inst = make_instance(_line(), [40, 30], [1, 1], [[1.0], [1.0]], [50, 100], [50, 50])
    assert policies.gca(inst).x.tolist() == [[1, 0], [0, 1]]


def test_gca_unplaced_flow_is_a_cache_miss():
    inst = make_instance(_line(), [40, 80], [1, 1], [[1.0], [1.0]], [50, 60], [50, 50])
    out = policies.gca(inst)
    assert out.x.tolist() == [[1, 0], [0, 0]]
    assert out.unassigned == [1]
    assert not out.routing.z[1].any() and not out.feasible
    assert out.objective == pytest.approx(1 / (1 - 0.8) + (1 + 12))


@pytest.mark.parametrize("seed", range(10))
def test_gca_respects_storage(table2_topology, seed):
    inst = generate_instance(seed, table2_topology, 12)
    out = policies.gca(inst)
    assert np.all(cost.ec_loads(inst, out.x) <= inst.w)


# -- cascades -----------------------------------------------------------------------

def test_cascade_k5_is_plain_argmax(small_instance):
    rows = np.eye(6)[[2, 0, 5, 1, 3]] * 0.7 + 0.05
    models = [FixedModel(r) for r in rows]
    out = policies.pure_cnn_cascade(small_instance, models)
    assert out.x.argmax(axis=1).tolist() == [2, 0, 5, 1, 3]
    assert [m.calls for m in models] == [1] * 5
    direct = predict_matrix(models, encode(small_instance))
    assert np.array_equal(out.prob_matrix, direct.o)


def test_cascade_k10_runs_two_rounds(table2_topology):
    inst = generate_instance(1, table2_topology, 10)
    models = [FixedModel(np.full(6, 1 / 6)) for _ in range(5)]
    policies.pure_cnn_cascade(inst, models)
    assert [m.calls for m in models] == [2] * 5


def _saturating_instance():
    """Round one puts five 20 MB flows on the 100 MB EC 0 and fills it."""
    topo = Topology(4, ((0, 1), (0, 2), (0, 3)), (0,), (1, 2, 3))
    K = 10
    return make_instance(topo, [20] * K, [1] * K, [[1.0]] * K, [100, 400, 400],
                         [100, 100, 100])


def test_round_two_never_uses_a_saturated_ec():
    inst = _saturating_instance()
    models = [FixedModel([0.9, 0.06, 0.04]) for _ in range(5)]
    out = policies.pure_cnn_cascade(inst, models)
    ecs = out.x.argmax(axis=1).tolist()
    assert ecs[:5] == [0] * 5
    assert ecs[5:] == [1] * 5


def test_cascade_stops_when_every_ec_is_full():
    topo = Topology(2, ((0, 1),), (0,), (1,))
    K = 7
    inst = make_instance(topo, [20] * K, [1] * K, [[1.0]] * K, [100], [100])
    out = policies.pure_cnn_cascade(inst, [FixedModel([1.0]) for _ in range(5)])
    assert out.unassigned == [5, 6]


def test_hybrid_matches_direct_hcls_at_five_flows(table2_topology):
    inst = generate_instance(8, table2_topology, 5)
    rng = np.random.default_rng(8)
    o = _random_o(rng, 5, 6)
    models = [FixedModel(r) for r in o]
    via_cascade = policies.hybrid_cascade(inst, models, mode="hcls", delta=0.05)
    direct = policies.hcls(inst, o, delta=0.05)
    assert np.array_equal(via_cascade.x, direct.x)
    assert via_cascade.moves == direct.moves


def test_hybrid_rmilp_k10_is_feasible(table2_topology):
    inst = generate_instance(9, table2_topology, 10)
    models = [FixedModel(np.eye(6)[k] * 0.99 + 0.002) for k in range(5)]
    out = policies.hybrid_cascade(inst, models, mode="rmilp", delta=0.1)
    assert out.feasible and out.policy == "cnn_rmilp"
    assert out.prob_matrix.shape == (10, 6)
    with pytest.raises(ValueError):
        policies.hybrid_cascade(inst, models, mode="beam")


# -- outcomes -----------------------------------------------------------------------

def test_outcome_json_round_trip_and_recomputation(small_instance):
    o = _random_o(np.random.default_rng(1), 5, 6)
    for out in (policies.benchmark(small_instance), policies.gca(small_instance),
                policies.hcls(small_instance, o), policies.cnn_rmilp(small_instance, o)):
        back = policies.PolicyOutcome.from_json(out.to_json())
        assert back.to_dict() == out.to_dict()
        again = cost.evaluate(small_instance, out.x, out.routing)
        assert again.penalty_score == pytest.approx(out.penalty_score, abs=1e-12)
        assert again.feasible == out.feasible


def test_policy_tags():
    with pytest.raises(ValueError):
        policies.PolicyOutcome("beam", None, 0.0)
    with pytest.raises(ValueError, match="needs trained models"):
        policies.run_policy("cnn-hcls", None)
