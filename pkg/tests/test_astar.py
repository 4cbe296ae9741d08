import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolpath.astar import (
    BenchmarkExecutor,
    PathAccumulator,
    SearchExhausted,
    TruthfulVLM,
    astar_search,
    compute_heuristics,
    g_score,
    score,
)
from toolpath.domain import BenchmarkTable, BenchRecord, SubtaskInstance, WorldState
from toolpath.subgraph import START, build_low_level_subgraph, subgraph_from_edges

from .test_acceptance import brute_force, random_subgraph

KIND = "Object Detection"


def bt_of(rows):
    return BenchmarkTable({(t, KIND): BenchRecord(c, q) for t, (c, q) in rows.items()})


def test_score_values():
    assert g_score(PathAccumulator.of([10], [0.9]), 1.0) == pytest.approx(11.0, abs=1e-9)
    assert g_score(PathAccumulator.of([10, 5], [0.9, 0.8]), 2.0) == pytest.approx(225.0, abs=1e-9)
    assert g_score(PathAccumulator(), 0.0) == 0.0
    # alpha = 0 ignores cost entirely
    assert score(1000.0, 0.9, 0.0) == pytest.approx(1.1**2)


def test_heuristic_two_branches():
    g = subgraph_from_edges([(START, "x"), ("x", "y"), ("x", "z")], frozenset({"y", "z"}))
    h = compute_heuristics(g, bt_of({"x": (1, 1), "y": (10, 0.9), "z": (20, 0.99)}), 1.0)
    assert h["y"].h_value == 0.0
    assert h["x"].h_value == pytest.approx(11.0)
    assert (h["x"].h_cost, h["x"].h_quality) == pytest.approx((10.0, 0.9))
    assert h.bound_cost["x"] == 10.0 and h.bound_quality["x"] == 0.99


# benchmark qualities are averages over contexts, several below the default gate
GATE = 0.5


def removal_fixture(knowledge):
    g = build_low_level_subgraph(SubtaskInstance("Object Removal", "car"), knowledge.mdt, knowledge.tdg)
    return g, knowledge.bt


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 1.5, 2.0])
def test_removal_matches_enumeration(knowledge, alpha):
    g, bt = removal_fixture(knowledge)
    out = astar_search(g, alpha, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=GATE)
    best = min(g.complete_paths(), key=lambda p: g_score(
        PathAccumulator.of([bt.get(g.nodes[n].tool, "Object Removal").cost for n in p],
                           [bt.get(g.nodes[n].tool, "Object Removal").quality for n in p]), alpha))
    assert out.path.labels == best
    assert out.score == pytest.approx(g_score(out.path, alpha))


def test_failing_terminal_gives_second_best(knowledge):
    g, bt = removal_fixture(knowledge)
    clean = astar_search(g, 1.0, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=GATE)
    terminal = clean.path.tools[-1]
    ex = BenchmarkExecutor(bt, failing=lambda tool, s: tool == terminal)
    out = astar_search(g, 1.0, bt, ex, TruthfulVLM(), q_thresh=GATE)
    assert out.vlm_failures >= 1
    assert terminal not in out.path.tools
    survivors = [p for p in g.complete_paths() if g.nodes[p[-1]].tool != terminal]
    kind = "Object Removal"
    best = min(survivors, key=lambda p: g_score(PathAccumulator.of(
        [bt.get(g.nodes[n].tool, kind).cost for n in p], [bt.get(g.nodes[n].tool, kind).quality for n in p]), 1.0))
    assert out.path.labels == best


def test_single_path_expansions():
    g = subgraph_from_edges([(START, "a"), ("a", "b"), ("b", "c")], frozenset({"c"}))
    bt = bt_of({"a": (1, 0.9), "b": (2, 0.9), "c": (3, 0.9)})
    out = astar_search(g, 1.0, bt, BenchmarkExecutor(bt), TruthfulVLM())
    assert out.tools == ["a", "b", "c"]
    assert out.expansions == 3
    assert out.search_cost == 6


def test_retry_costs_and_abandon():
    g = subgraph_from_edges([(START, "a"), (START, "b")], frozenset({"a", "b"}))
    bt = bt_of({"a": (1, 0.9), "b": (5, 0.9)})
    ex = BenchmarkExecutor(bt, failing=lambda tool, s: tool == "a")
    out = astar_search(g, 1.0, bt, ex, TruthfulVLM(), retries=2)
    assert out.tools == ["b"]
    assert out.retries == 2 and out.vlm_failures == 1
    # three runs of the failing tool plus the successful one
    assert out.search_cost == 3 * 1 + 5
    assert out.failures[0].tool == "a"


def test_exhausted_search():
    g = subgraph_from_edges([(START, "a")], frozenset({"a"}))
    bt = bt_of({"a": (1, 0.9)})
    with pytest.raises(SearchExhausted) as err:
        astar_search(g, 1.0, bt, BenchmarkExecutor(bt, failing=lambda t, s: True), TruthfulVLM())
    assert err.value.outcome.vlm_failures == 1


def test_quality_exactly_at_threshold_passes():
    g = subgraph_from_edges([(START, "a")], frozenset({"a"}))
    bt = bt_of({"a": (1, 0.8)})
    out = astar_search(g, 1.0, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=0.8)
    assert out.tools == ["a"] and out.vlm_failures == 0


def test_search_log_records_actions():
    g = subgraph_from_edges([(START, "a"), (START, "b")], frozenset({"a", "b"}))
    bt = bt_of({"a": (1, 0.9), "b": (5, 0.9)})
    ex = BenchmarkExecutor(bt, failing=lambda tool, s: tool == "a")
    out = astar_search(g, 1.0, bt, ex, TruthfulVLM(), record_log=True)
    actions = [r["action"] for r in out.log]
    assert actions[:3] == ["expand", "retry", "abandon"]
    assert set(out.log[0]) == {"node", "g", "h", "f", "action"}


def test_state_threads_through_segment_leaves(knowledge):
    from toolpath.chain import SubtaskChain
    from toolpath.domain import SceneObject
    from toolpath.subgraph import build_full_subgraph

    ops = (SubtaskInstance("Object Replacement", "cat", "dog", 1), SubtaskInstance("Object Removal", "dog", "", 2))
    g = build_full_subgraph(SubtaskChain(ops), knowledge.mdt, knowledge.tdg)
    state = WorldState([SceneObject("cat", {"object_size": "large"})])
    out = astar_search(g, 1.0, knowledge.bt, BenchmarkExecutor(knowledge.bt), TruthfulVLM(), q_thresh=GATE, state=state)
    assert out.final_state.objects == []
    assert [s.subtask.ordinal for s in out.path.steps] == sorted(s.subtask.ordinal for s in out.path.steps)


def test_composed_priority_is_also_exact():
    for seed in range(100):
        g, bt = random_subgraph(random.Random(seed))
        for alpha in (0.0, 1.0, 2.0):
            out = astar_search(g, alpha, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=0.0, priority="composed")
            assert out.path.labels == brute_force(g, bt, alpha)[1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0]))
def test_oracle_equivalence(seed, alpha):
    g, bt = random_subgraph(random.Random(seed))
    out = astar_search(g, alpha, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=0.0)
    val, path = brute_force(g, bt, alpha)
    assert out.path.labels == path
    assert abs(out.score - val) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.5, 1.0, 1.5, 2.0]), st.floats(0.1, 50))
def test_cost_rescaling_keeps_argmin(seed, alpha, k):
    g, bt = random_subgraph(random.Random(seed))
    a = astar_search(g, alpha, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=0.0)
    scaled = bt.scaled(k)
    b = astar_search(g, alpha, scaled, BenchmarkExecutor(scaled), TruthfulVLM(), q_thresh=0.0)
    # near-ties may legitimately flip under floating-point rescaling
    if a.path.labels != b.path.labels:
        assert math.isclose(b.score, a.score * k**alpha, rel_tol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_argmin_cost_non_increasing_in_alpha(seed):
    """Larger alpha weights cost more, so the optimal path's cost never grows."""
    g, bt = random_subgraph(random.Random(seed))
    costs = []
    for alpha in (0.0, 0.5, 1.0, 1.5, 2.0):
        out = astar_search(g, alpha, bt, BenchmarkExecutor(bt), TruthfulVLM(), q_thresh=0.0)
        costs.append(out.path.cost_sum)
    assert all(b <= a + 1e-9 for a, b in itertools.pairwise(costs))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0]))
def test_bounds_are_optimistic(seed, alpha):
    """The completion bounds never exceed any real completion from a node."""
    g, bt = random_subgraph(random.Random(seed))
    h = compute_heuristics(g, bt, alpha)
    for p in g.complete_paths():
        for i, n in enumerate(p):
            rest = p[i + 1:]
            c = sum(bt.get(x, KIND).cost for x in rest)
            q = math.prod(bt.get(x, KIND).quality for x in rest)
            assert h.bound_cost[n] <= c + 1e-9
            assert h.bound_quality[n] >= q - 1e-9
