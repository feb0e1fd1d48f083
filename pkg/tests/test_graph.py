import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scbm.graph import (
    CycleError,
    Dag,
    Edge,
    bottleneck_mixed_graph,
    causal_grading,
    causal_order,
    conditioning_set,
    estimation_schedule,
    raw_conditioning_nodes,
    sample_er_dag,
)

# node k of the written examples is index k - 1 here
COMPLETE3 = Dag(3, [(0, 1), (0, 2), (1, 2)])
CHAIN3 = Dag(3, [(0, 1), (1, 2)])
TRANSFER = Dag(3, [(2, 0), (2, 1), (0, 1)])


def test_rejects_bad_edges():
    with pytest.raises(ValueError):
        Dag(2, [(0, 0)])
    with pytest.raises(ValueError):
        Dag(2, [(0, 2)])
    with pytest.raises(ValueError):
        Dag(2, [(0, 1), (0, 1)])
    with pytest.raises(ValueError):
        Dag(2, [], node_dims=[1, 0])
    with pytest.raises(CycleError):
        Dag(3, [(0, 1), (1, 2), (2, 0)])


def test_er_small_cases():
    assert sample_er_dag(1, 0.9, rng=0).edges == ()
    assert len(sample_er_dag(4, 1.0, rng=3).edges) == 6
    with pytest.raises(ValueError):
        sample_er_dag(3, 1.5)


def test_er_mean_edge_count():
    counts = [len(sample_er_dag(10, 0.7, rng=s).edges) for s in range(1000)]
    # expectation 0.7 * 45
    assert abs(np.mean(counts) - 31.5) <= 1.0


def test_causal_order_examples():
    assert causal_order(CHAIN3) == [0, 1, 2]
    assert causal_order(Dag(3)) == [0, 1, 2]
    assert causal_order(TRANSFER) == [2, 0, 1]


def test_grading_examples():
    assert causal_grading(CHAIN3) == [[0], [1], [2]]
    diamond = Dag(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert causal_grading(diamond) == [[0], [1, 2], [3]]
    assert causal_grading(Dag(4)) == [[0, 1, 2, 3]]


def test_conditioning_set_examples():
    assert conditioning_set(COMPLETE3, (1, 2)) == [Edge(0, 1)]
    assert conditioning_set(COMPLETE3, (0, 2)) == [Edge(1, 2)]
    assert conditioning_set(CHAIN3, (0, 1)) == []
    assert raw_conditioning_nodes(COMPLETE3, (1, 2)) == [0]
    with pytest.raises(ValueError):
        conditioning_set(CHAIN3, (0, 2))


def test_schedule_examples():
    assert estimation_schedule(COMPLETE3) == [(0, 1), (1, 2), (0, 2)]
    assert estimation_schedule(CHAIN3) == [(0, 1), (1, 2)]


def test_mixed_graph_examples():
    g = bottleneck_mixed_graph(CHAIN3)
    assert g.nodes == {Edge(0, 1), Edge(1, 2)}
    assert g.directed == {(Edge(0, 1), Edge(1, 2))}
    assert not g.bidirected
    fork = bottleneck_mixed_graph(Dag(3, [(0, 1), (0, 2)]))
    assert fork.bidirected == {frozenset((Edge(0, 1), Edge(0, 2)))}
    assert not fork.directed
    full = bottleneck_mixed_graph(COMPLETE3)
    assert full.directed == {(Edge(0, 1), Edge(1, 2))}
    assert full.bidirected == {frozenset((Edge(0, 1), Edge(0, 2)))}


dags = st.builds(
    lambda n, p, seed: sample_er_dag(n, p, rng=seed),
    st.integers(1, 6),
    st.floats(0.0, 1.0),
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=200, deadline=None)
@given(dags)
def test_schedule_prefix_property(dag):
    sched = estimation_schedule(dag)
    assert sorted(sched) == list(dag.edges)
    pos = {e: k for k, e in enumerate(sched)}
    for e in sched:
        for c in conditioning_set(dag, e):
            assert pos[c] < pos[e]
            # never a bottleneck of the treatment itself
            assert c.source != e.source


@settings(max_examples=200, deadline=None)
@given(dags)
def test_order_and_grading_properties(dag):
    order = causal_order(dag)
    pos = {v: k for k, v in enumerate(order)}
    assert all(pos[i] < pos[j] for i, j in dag.edges)
    levels = causal_grading(dag)
    flat = [v for lvl in levels for v in lvl]
    assert sorted(flat) == list(dag.nodes)
    assert set(levels[0]) == set(dag.roots)
    level_of = {v: s for s, lvl in enumerate(levels) for v in lvl}
    for j in dag.nodes:
        if dag.parents(j):
            assert level_of[j] == 1 + max(level_of[i] for i in dag.parents(j))


@settings(max_examples=100, deadline=None)
@given(dags)
def test_mixed_graph_matches_definition(dag):
    g = bottleneck_mixed_graph(dag)
    E = set(dag.edges)
    want_dir = {(a, b) for a, b in itertools.product(E, E) if a.target == b.source}
    want_bi = {frozenset((a, b)) for a, b in itertools.product(E, E) if a.source == b.source and a.target != b.target}
    assert g.directed == want_dir
    assert g.bidirected == want_bi


@settings(max_examples=50, deadline=None)
@given(dags)
def test_json_round_trip(dag):
    text = dag.to_json()
    assert Dag.from_json(text) == dag
    assert Dag.from_json(text).to_json() == text
    edges = Dag.from_json(text).to_dict()["edges"]
    assert edges == sorted(edges)
