"""Graph data model with the spatial/temporal edge rules and connected components."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

SPATIAL = "spatial"
TEMPORAL = "temporal"
FLAVORS = (SPATIAL, TEMPORAL)

APPEARANCE_DIM = 512


@dataclass(eq=False)
class Node:
    node_id: int
    camera_ids: list[int]
    timestamp: int
    bboxes: list[tuple[int, tuple[float, float, float, float]]]
    appearance: np.ndarray
    position: np.ndarray
    speed: np.ndarray | None = None
    object_id: int | None = None
    tracklet_id: int | None = None
    # indices of the raw detections of the current frame folded into this node
    members: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.bboxes:
            raise ValueError(f"node {self.node_id} has no bounding boxes")


@dataclass(eq=False)
class Edge:
    u: int
    v: int
    feature: np.ndarray | None = None
    confidence: float | None = None
    label: int | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.u, self.v)


def edge_key(a: int, b: int) -> tuple[int, int]:
    if a == b:
        raise ValueError(f"self-loop on node {a}")
    return (a, b) if a < b else (b, a)


class Graph:
    """Undirected graph; every edge is stored once under its ascending endpoint pair."""

    def __init__(self, flavor: str, nodes: Iterable[Node] = ()) -> None:
        if flavor not in FLAVORS:
            raise ValueError(f"unknown graph flavor {flavor!r}")
        self.flavor = flavor
        self.nodes: dict[int, Node] = {}
        self.edges: dict[tuple[int, int], Edge] = {}
        self._adj: dict[int, set[int]] = {}
        for n in nodes:
            self.add_node(n)

    def __repr__(self) -> str:
        return f"Graph({self.flavor}, nodes={len(self.nodes)}, edges={len(self.edges)})"

    def add_node(self, node: Node) -> None:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        self.nodes[node.node_id] = node
        self._adj[node.node_id] = set()

    def add_edge(self, a: int, b: int, **attrs) -> Edge:
        u, v = edge_key(a, b)
        if u not in self.nodes or v not in self.nodes:
            raise KeyError(f"edge ({u}, {v}) references an unknown node")
        e = Edge(u, v, **attrs)
        self.edges[(u, v)] = e
        self._adj[u].add(v)
        self._adj[v].add(u)
        return e

    def remove_edge(self, a: int, b: int) -> None:
        u, v = edge_key(a, b)
        del self.edges[(u, v)]
        self._adj[u].discard(v)
        self._adj[v].discard(u)

    def has_edge(self, a: int, b: int) -> bool:
        return edge_key(a, b) in self.edges

    def neighbors(self, node_id: int) -> list[int]:
        return sorted(self._adj[node_id])

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def edge_keys(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def iter_edges(self) -> Iterator[Edge]:
        for k in self.edge_keys():
            yield self.edges[k]

    @property
    def frame_range(self) -> tuple[int, int] | None:
        if not self.nodes:
            return None
        ts = [n.timestamp for n in self.nodes.values()]
        return min(ts), max(ts)


def degree(g: Graph, node_id: int) -> int:
    if node_id not in g.nodes:
        raise KeyError(f"unknown node id {node_id}")
    return len(g._adj[node_id])


class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self, items: Iterable[int] = ()) -> None:
        self.parent: dict[int, int] = {}
        self.size: dict[int, int] = {}
        for x in items:
            self.add(x)

    def add(self, x: int) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components(g: Graph) -> list[list[int]]:
    """Components as ascending id lists, ordered by their smallest id."""
    uf = UnionFind(g.nodes)
    for u, v in g.edges:
        uf.union(u, v)
    groups: dict[int, list[int]] = {}
    for nid in g.node_ids():
        groups.setdefault(uf.find(nid), []).append(nid)
    return sorted(groups.values(), key=lambda c: c[0])


def build_spatial_graph(detections: Iterable[Node]) -> Graph:
    detections = list(detections)
    stamps = {n.timestamp for n in detections}
    if len(stamps) > 1:
        raise ValueError(f"spatial graph needs a single timestamp, got {sorted(stamps)}")
    g = Graph("spatial", detections)
    ids = g.node_ids()
    cams = {nid: set(g.nodes[nid].camera_ids) for nid in ids}
    for a, b in itertools.combinations(ids, 2):
        if cams[a].isdisjoint(cams[b]):
            g.add_edge(a, b)
    return g


def build_temporal_edges(nodes: Iterable[Node]) -> Graph:
    g = Graph("temporal", nodes)
    ids = g.node_ids()
    for a, b in itertools.combinations(ids, 2):
        if g.nodes[a].timestamp != g.nodes[b].timestamp:
            g.add_edge(a, b)
    return g


def check_edge_rules(g: Graph) -> list[str]:
    """Violations of the flavor's edge rule (empty when the graph is well formed)."""
    bad = []
    for (u, v) in g.edges:
        a, b = g.nodes[u], g.nodes[v]
        if g.flavor == SPATIAL and not set(a.camera_ids).isdisjoint(b.camera_ids):
            bad.append(f"same-camera spatial edge ({u}, {v})")
        if g.flavor == TEMPORAL and a.timestamp == b.timestamp:
            bad.append(f"same-timestamp temporal edge ({u}, {v})")
    return bad
