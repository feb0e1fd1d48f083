"""DAGs, causal orders, and the bottleneck-level graph derived from them.

Nodes are 0-based integers. Every edge ``(i, j)`` of a factored bottleneck
model carries its own bottleneck variable, so edges double as bottleneck
identifiers throughout the package.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class Edge(NamedTuple):
    source: int
    target: int

    def __str__(self) -> str:
        return f"{self.source}->{self.target}"


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph with a vector dimension attached to every node."""

    num_nodes: int
    edges: tuple[Edge, ...]
    node_dims: tuple[int, ...]
    _parents: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _children: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __init__(self, num_nodes: int, edges: Iterable[Sequence[int]] = (), node_dims=1):
        num_nodes = int(num_nodes)
        if num_nodes < 1:
            raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")
        if np.isscalar(node_dims):
            node_dims = (int(node_dims),) * num_nodes
        node_dims = tuple(int(d) for d in node_dims)
        if len(node_dims) != num_nodes:
            raise ValueError(f"expected {num_nodes} node dims, got {len(node_dims)}")
        if any(d < 1 for d in node_dims):
            raise ValueError(f"node dims must be >= 1, got {node_dims}")

        seen = set()
        for e in edges:
            i, j = int(e[0]), int(e[1])
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise ValueError(f"edge ({i}, {j}) has an endpoint outside 0..{num_nodes - 1}")
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

        parents = [[] for _ in range(num_nodes)]
        children = [[] for _ in range(num_nodes)]
        for i, j in sorted(seen):
            parents[j].append(i)
            children[i].append(j)

        object.__setattr__(self, "num_nodes", num_nodes)
        object.__setattr__(self, "edges", tuple(Edge(i, j) for i, j in sorted(seen)))
        object.__setattr__(self, "node_dims", node_dims)
        object.__setattr__(self, "_parents", tuple(tuple(p) for p in parents))
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        # raises on cycles
        _topological_order(self)

    def parents(self, node: int) -> tuple[int, ...]:
        return self._parents[node]

    def children(self, node: int) -> tuple[int, ...]:
        return self._children[node]

    @property
    def nodes(self) -> range:
        return range(self.num_nodes)

    @property
    def roots(self) -> tuple[int, ...]:
        return tuple(i for i in self.nodes if not self._parents[i])

    def has_edge(self, source: int, target: int) -> bool:
        return 0 <= target < self.num_nodes and source in self._parents[target]

    def descendants(self, node: int) -> set[int]:
        out: set[int] = set()
        stack = list(self._children[node])
        while stack:
            k = stack.pop()
            if k not in out:
                out.add(k)
                stack.extend(self._children[k])
        return out

    def without_edge(self, source: int, target: int) -> "Dag":
        return Dag(self.num_nodes, [e for e in self.edges if e != (source, target)], self.node_dims)

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "node_dims": list(self.node_dims),
            "edges": [[e.source, e.target] for e in self.edges],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Dag":
        return cls(obj["num_nodes"], obj["edges"], obj["node_dims"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Dag":
        return cls.from_dict(json.loads(text))


def _topological_order(dag: Dag) -> list[int]:
    indegree = [len(dag.parents(i)) for i in dag.nodes]
    heap = [i for i in dag.nodes if indegree[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in dag.children(i):
            indegree[j] -= 1
            if indegree[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != dag.num_nodes:
        stuck = sorted(set(dag.nodes) - set(order))
        raise CycleError(f"edge set contains a cycle through nodes {stuck}")
    return order


def sample_er_dag(num_nodes: int, edge_prob: float, node_dims=1, rng=None) -> Dag:
    """Erdős–Rényi DAG: each forward pair of a random node permutation is an
    edge with probability ``edge_prob``."""
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must lie in [0, 1], got {edge_prob}")
    if num_nodes < 1:
        raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(num_nodes)
    edges = []
    for a in range(num_nodes):
        for b in range(a + 1, num_nodes):
            if rng.random() < edge_prob:
                edges.append((int(perm[a]), int(perm[b])))
    return Dag(num_nodes, edges, node_dims)


def causal_order(dag: Dag) -> list[int]:
    """Topological order; ties go to the smallest node index."""
    return _topological_order(dag)


def causal_grading(dag: Dag) -> list[list[int]]:
    """Partition nodes into levels: roots first, then every node whose parents
    all sit in earlier levels."""
    level = [0] * dag.num_nodes
    for j in causal_order(dag):
        if dag.parents(j):
            level[j] = 1 + max(level[i] for i in dag.parents(j))
    levels: list[list[int]] = [[] for _ in range(max(level) + 1)]
    for i in dag.nodes:
        levels[level[i]].append(i)
    return levels


def _check_edge(dag: Dag, edge) -> Edge:
    edge = Edge(int(edge[0]), int(edge[1]))
    if not dag.has_edge(*edge):
        raise ValueError(f"({edge.source}, {edge.target}) is not an edge of the graph")
    return edge


def conditioning_set(dag: Dag, edge) -> list[Edge]:
    """Bottlenecks to adjust for when estimating the bottleneck of ``edge``.

    For ``i -> j`` this is every bottleneck into ``i`` (closes backdoor paths)
    plus the bottlenecks into ``j`` from parents that come after ``i`` in the
    causal order (closes frontdoor paths). Bottlenecks leaving ``i`` are never
    included: they are deterministic functions of the source.
    """
    i, j = _check_edge(dag, edge)
    pos = {node: k for k, node in enumerate(causal_order(dag))}
    out = [Edge(k, i) for k in dag.parents(i)]
    out += [Edge(l, j) for l in dag.parents(j) if l != i and pos[l] > pos[i]]
    return sorted(out, key=lambda e: (pos[e.target], pos[e.source]))


def raw_conditioning_nodes(dag: Dag, edge) -> list[int]:
    """Node-level counterpart of :func:`conditioning_set`: pa(i) and the later
    parents of j, adjusted on as raw vectors."""
    return sorted({e.source for e in conditioning_set(dag, edge)})


def estimation_schedule(dag: Dag) -> list[Edge]:
    """Targets in causal order; for each target, its parents in reverse causal order."""
    order = causal_order(dag)
    pos = {node: k for k, node in enumerate(order)}
    schedule = []
    for j in order:
        for i in sorted(dag.parents(j), key=pos.__getitem__, reverse=True):
            schedule.append(Edge(i, j))
    return schedule


@dataclass(frozen=True)
class MixedGraph:
    """Graph over bottleneck variables: one node per DAG edge, directed edges
    for composable pairs, bidirected edges for siblings sharing a source noise."""

    nodes: frozenset[Edge]
    directed: frozenset[tuple[Edge, Edge]]
    bidirected: frozenset[frozenset[Edge]]


def bottleneck_mixed_graph(dag: Dag) -> MixedGraph:
    nodes = frozenset(dag.edges)
    directed = set()
    bidirected = set()
    for i in dag.nodes:
        incoming = [Edge(k, i) for k in dag.parents(i)]
        outgoing = [Edge(i, j) for j in dag.children(i)]
        for a in incoming:
            for b in outgoing:
                directed.add((a, b))
        for x in range(len(outgoing)):
            for y in range(x + 1, len(outgoing)):
                bidirected.add(frozenset((outgoing[x], outgoing[y])))
    return MixedGraph(nodes, frozenset(directed), frozenset(bidirected))
