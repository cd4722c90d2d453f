"""Fixed bidirectional communication topology and structural queries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

NodeSet = frozenset


class GraphError(ValueError):
    """Raised for malformed topologies or out-of-range node ids."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph over dense integer ids.

    ``node_count`` is the size of the id space; ``nodes`` is the vertex set
    actually present (a strict subset only for induced subgraphs).
    Edges are stored as sorted pairs ``(a, b)`` with ``a < b``.
    """

    node_count: int
    edges: frozenset
    nodes: frozenset = None
    _adj: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.nodes is None:
            object.__setattr__(self, "nodes", frozenset(range(self.node_count)))
        adj = [set() for _ in range(self.node_count)]
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(self, "_adj", tuple(frozenset(s) for s in adj))

    def neighbors(self, j: int) -> frozenset:
        _check_id(self, j)
        return self._adj[j]

    def degree(self, j: int) -> int:
        return len(self.neighbors(j))

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def _check_id(g: Graph, j: int) -> None:
    if not (0 <= j < g.node_count) or j not in g.nodes:
        raise GraphError(f"node id {j} out of range for graph on {g.node_count} nodes")


def build_graph(node_count: int, edge_list: Iterable[Iterable[int]]) -> Graph:
    """Validate an edge list and build a :class:`Graph`.

    Duplicate pairs, in either orientation, collapse to one edge.
    """
    if int(node_count) != node_count or node_count < 2:
        raise GraphError(f"node_count must be an integer >= 2, got {node_count!r}")
    node_count = int(node_count)
    edges = set()
    for pair in edge_list:
        a, b = (int(v) for v in pair)
        if a == b:
            raise GraphError(f"self-loop on node {a}")
        for v in (a, b):
            if not 0 <= v < node_count:
                raise GraphError(f"node id {v} out of range [0, {node_count})")
        edges.add((min(a, b), max(a, b)))
    return Graph(node_count, frozenset(edges))


def neighbors(g: Graph, j: int) -> frozenset:
    return g.neighbors(j)


def two_hop_set(g: Graph, j: int) -> frozenset:
    """Neighbors and neighbors-of-neighbors of ``j``, excluding ``j``."""
    near = g.neighbors(j)
    out = set(near)
    for i in near:
        out |= g.neighbors(i)
    out.discard(j)
    return frozenset(out)


def induced_subgraph(g: Graph, keep: Iterable[int]) -> Graph:
    keep = frozenset(keep)
    for v in keep:
        _check_id(g, v)
    edges = frozenset((a, b) for a, b in g.edges if a in keep and b in keep)
    return Graph(g.node_count, edges, keep)


def is_connected(g: Graph) -> bool:
    if not g.nodes:
        return True
    start = min(g.nodes)
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for u in g.neighbors(v):
            if u in g.nodes and u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == len(g.nodes)


@dataclass(frozen=True)
class AssumptionViolation:
    kind: str
    detail: str

    def as_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


VALIDATION_MODES = ("oracle", "concurrent", "infrequent")


def validate_assumptions(g: Graph, malicious: Iterable[int], mode: str) -> list[AssumptionViolation]:
    """List the topological assumptions a scenario violates.

    Violations are reported, never raised, so that counterexample
    scenarios stay runnable. ``mode`` is one of ``oracle``, ``concurrent``,
    ``infrequent``; the last two additionally forbid adjacent malicious nodes.
    """
    if mode not in VALIDATION_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    malicious = frozenset(malicious)
    for v in malicious:
        _check_id(g, v)
    report = []
    honest = g.nodes - malicious
    if not honest:
        report.append(AssumptionViolation("no_trustworthy_nodes", "every node is labelled malicious"))
    elif not is_connected(induced_subgraph(g, honest)):
        report.append(
            AssumptionViolation(
                "trustworthy_subgraph_disconnected",
                f"subgraph induced by {sorted(honest)} is disconnected",
            )
        )
    if mode != "oracle":
        for a, b in sorted(g.edges):
            if a in malicious and b in malicious:
                report.append(
                    AssumptionViolation("adjacent_malicious_pair", f"malicious nodes {a} and {b} are neighbors")
                )
    return report


def random_connected_graph(
    node_count: int,
    edge_prob: float,
    seed: int,
    malicious: Iterable[int] = (),
    forbid_adjacent_malicious: bool = False,
    max_tries: int = 1000,
) -> Graph:
    """Sample G(n, p) graphs until the honest-induced subgraph is connected.

    With ``forbid_adjacent_malicious`` the edges between malicious nodes are
    dropped before the connectivity test.
    """
    rng = np.random.default_rng(seed)
    malicious = frozenset(malicious)
    iu = np.triu_indices(node_count, k=1)
    for _ in range(max_tries):
        mask = rng.random(len(iu[0])) < edge_prob
        pairs = [(int(a), int(b)) for a, b, m in zip(iu[0], iu[1], mask) if m]
        if forbid_adjacent_malicious:
            pairs = [(a, b) for a, b in pairs if not (a in malicious and b in malicious)]
        g = build_graph(node_count, pairs)
        if not is_connected(g):
            continue
        if malicious and not is_connected(induced_subgraph(g, g.nodes - malicious)):
            continue
        return g
    raise GraphError(f"no suitable graph found in {max_tries} tries (n={node_count}, p={edge_prob})")
