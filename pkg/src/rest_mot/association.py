"""Online tracker: spatial association, graph reconfiguration, temporal association.

Per frame ``t``:

1. one node per detection, a spatial graph over cameras, MPN scores, pruning and splitting;
2. every spatial component and every component of the previous temporal graph is
   collapsed into one node, and temporal edges join nodes of different timestamps;
3. temporal MPN scores, pruning, splitting, and tracklet id assignment.

The previous temporal graph therefore holds one node per active tracklet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataio import DetectionRecord
from .geometry import Homography, OrderingError, project_foot_point
from .graph import SPATIAL, TEMPORAL, Graph, Node, build_spatial_graph, connected_components, degree
from .mpn import DEFAULT_ITERATIONS, FeatureMask, forward, graph_tensors
from .neural import GraphModel


@dataclass
class TrackerConfig:
    n_iter: int = DEFAULT_ITERATIONS
    window: int = 3  # M
    epsilon: float = 0.9
    split_spatial: bool = True
    split_temporal: bool = True
    features: FeatureMask = field(default_factory=FeatureMask)
    normalize_appearance: bool = False
    # "mean" averages every member position; "latest" averages only the most recent members
    aggregate_position: str = "mean"
    aggregation: str = "sum"

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ValueError("temporal window M must be >= 2")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("pruning threshold must lie in (0, 1)")
        if self.aggregate_position not in ("mean", "latest"):
            raise ValueError(f"unknown aggregate_position {self.aggregate_position!r}")


@dataclass
class TrackState:
    camera_count: int
    window: int = 3
    epsilon: float = 0.9
    current_time: int | None = None
    previous: Graph | None = None  # post-processed temporal graph of the last frame
    next_tracklet_id: int = 0
    next_node_id: int = 0

    def new_node_id(self) -> int:
        self.next_node_id += 1
        return self.next_node_id - 1

    def new_tracklet_id(self) -> int:
        self.next_tracklet_id += 1
        return self.next_tracklet_id - 1


@dataclass(frozen=True)
class Assignment:
    camera_id: int
    bbox: tuple[float, float, float, float]
    tracklet_id: int
    confidence: float
    ground: tuple[float, float]


@dataclass
class FrameResult:
    frame: int
    assignments: list[Assignment]  # one per input detection, in input order


# ---------------------------------------------------------------------------
# nodes


def detection_nodes(records: Sequence[DetectionRecord], calibration: Mapping[int, Homography],
                    state: TrackState | None = None, normalize: bool = False, first_id: int = 0) -> list[Node]:
    """One node per detection; ids come from ``state`` when given, else count from ``first_id``."""
    nodes = []
    for k, r in enumerate(records):
        if r.camera_id not in calibration:
            raise KeyError(f"no calibration for camera {r.camera_id}")
        d = r.feature
        if normalize:
            n = np.linalg.norm(d)
            d = d / n if n > 0 else d
        nid = state.new_node_id() if state is not None else first_id + k
        nodes.append(Node(nid, [r.camera_id], r.frame, [(r.camera_id, r.bbox)], d,
                          project_foot_point(r.bbox, calibration[r.camera_id]), object_id=r.gt_id, members=[k]))
    return nodes


def aggregate(node_id: int, members: Sequence[Node], position: str = "mean") -> Node:
    """Collapse ``members`` into one node: mean appearance and position, latest timestamp."""
    ts = max(n.timestamp for n in members)
    latest = [n for n in members if n.timestamp == ts]
    pos_src = members if position == "mean" else latest
    ids = {n.tracklet_id for n in members if n.tracklet_id is not None}
    if len(ids) > 1:
        raise RuntimeError(f"component mixes tracklet ids {sorted(ids)}")
    speeds = [n.speed if n.speed is not None else np.zeros(2) for n in latest]
    objs = [n.object_id for n in members if n.object_id is not None]
    obj = max(set(objs), key=lambda o: (objs.count(o), -o)) if objs else None
    return Node(
        node_id,
        [c for n in latest for c in n.camera_ids],
        ts,
        [b for n in latest for b in n.bboxes],
        np.mean([n.appearance for n in members], axis=0),
        np.mean([n.position for n in pos_src], axis=0),
        speed=np.mean(speeds, axis=0),
        object_id=obj,
        tracklet_id=ids.pop() if ids else None,
        members=[m for n in latest for m in n.members],
    )


# ---------------------------------------------------------------------------
# post-processing


def prune(g: Graph, scores: Mapping[tuple[int, int], float], epsilon: float) -> Graph:
    """Record every score on its edge, then keep only edges scoring strictly above ``epsilon``."""
    missing = set(g.edges) - set(scores)
    if missing:
        raise ValueError(f"no score for edges {sorted(missing)[:5]}")
    for key, e in list(g.edges.items()):
        e.confidence = float(scores[key])
        if not e.confidence > epsilon:
            g.remove_edge(*key)
    return g


def component_violates(g: Graph, comp: Sequence[int], camera_count: int, window: int) -> bool:
    if g.flavor == SPATIAL:
        if len(comp) > camera_count:
            return True
        return any(degree(g, v) > camera_count - 1 for v in comp)
    return any(degree(g, v) > window - 1 for v in comp)


def _weakest_edge(g: Graph, comp: Sequence[int]) -> tuple[int, int]:
    inside = set(comp)
    keys = [k for k in g.edges if k[0] in inside]
    return min(keys, key=lambda k: (g.edges[k].confidence if g.edges[k].confidence is not None else -np.inf, k))


def split(g: Graph, camera_count: int, window: int) -> int:
    """Remove the weakest edge of each violating component until none violates; returns removals."""
    removed = 0
    while True:
        bad = [c for c in connected_components(g) if component_violates(g, c, camera_count, window)]
        if not bad:
            return removed
        for comp in bad:
            g.remove_edge(*_weakest_edge(g, comp))
            removed += 1


def constraint_violations(g: Graph, camera_count: int, window: int) -> list[str]:
    out = []
    for comp in connected_components(g):
        if g.flavor == SPATIAL and len(comp) > camera_count:
            out.append(f"component of {len(comp)} nodes exceeds {camera_count}")
        bound = camera_count - 1 if g.flavor == SPATIAL else window - 1
        for v in comp:
            if degree(g, v) > bound:
                out.append(f"node {v} has degree {degree(g, v)} > {bound}")
    return out


def assign_ids(g: Graph, state: TrackState, t: int) -> dict[int, int]:
    """Tracklet id for every node stamped ``t``; inherited over a surviving edge, else fresh.

    A node linked to several earlier nodes keeps only its most confident link.
    Stored speed becomes the displacement per frame from the inherited node.
    """
    out = {}
    for nid in g.node_ids():
        node = g.nodes[nid]
        if node.timestamp != t:
            continue
        prev = [u for u in g.neighbors(nid) if g.nodes[u].timestamp < t]
        if len(prev) > 1:
            keep = min(prev, key=lambda u: (-g.edges[_key(u, nid)].confidence, _key(u, nid)))
            for u in prev:
                if u != keep:
                    g.remove_edge(u, nid)
            prev = [keep]
        if prev and g.nodes[prev[0]].tracklet_id is not None:
            p = g.nodes[prev[0]]
            node.tracklet_id = p.tracklet_id
            node.speed = (node.position - p.position) / (t - p.timestamp)
        else:
            node.tracklet_id = state.new_tracklet_id()
            node.speed = np.zeros(2)
        out[nid] = node.tracklet_id
    return out


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def post_process(g: Graph, scores: Mapping[tuple[int, int], float], state: TrackState,
                 do_split: bool = True, t: int | None = None) -> Graph:
    prune(g, scores, state.epsilon)
    if g.flavor == TEMPORAL and t is not None:
        # both endpoints already carry final ids, so links among earlier nodes are discarded
        for u, v in list(g.edges):
            if g.nodes[u].timestamp < t and g.nodes[v].timestamp < t:
                g.remove_edge(u, v)
    if do_split:
        split(g, state.camera_count, state.window)
    if g.flavor == TEMPORAL and t is not None:
        assign_ids(g, state, t)
    return g


# ---------------------------------------------------------------------------
# the two association stages


def score_graph(g: Graph, model: GraphModel, cfg: TrackerConfig) -> dict[tuple[int, int], float]:
    if not g.edges:
        return {}
    t = graph_tensors(g, cfg.features, cfg.aggregation)
    trace = forward(t, model, cfg.n_iter)
    conf = trace.scores()
    ids = t.node_ids
    return {(int(ids[a]), int(ids[b])): float(c) for a, b, c in zip(t.src, t.dst, conf)}


def spatial_associate(nodes: Sequence[Node], model: GraphModel, state: TrackState, cfg: TrackerConfig) -> Graph:
    g = build_spatial_graph(nodes)
    return post_process(g, score_graph(g, model, cfg), state, do_split=cfg.split_spatial)


def reconfigure(g_spatial: Graph, g_prev: Graph | None, state: TrackState, t: int,
                position: str = "mean") -> Graph:
    """Collapse components of both graphs into nodes and link nodes of different timestamps."""
    if g_spatial.flavor != SPATIAL or (g_prev is not None and g_prev.flavor != TEMPORAL):
        raise ValueError("reconfigure needs a spatial graph and a temporal graph")
    nodes = []
    if g_prev is not None:
        for comp in connected_components(g_prev):
            agg = aggregate(state.new_node_id(), [g_prev.nodes[i] for i in comp], position)
            if agg.timestamp >= t - (state.window - 1):
                nodes.append(agg)
    for comp in connected_components(g_spatial):
        nodes.append(aggregate(state.new_node_id(), [g_spatial.nodes[i] for i in comp], position))
    g = Graph(TEMPORAL, nodes)
    ids = g.node_ids()
    for i, a in enumerate(ids):
        ta = g.nodes[a].timestamp
        for b in ids[i + 1:]:
            if g.nodes[b].timestamp != ta:
                g.add_edge(a, b)
    return g


def temporal_associate(g: Graph, model: GraphModel, state: TrackState, cfg: TrackerConfig, t: int) -> Graph:
    return post_process(g, score_graph(g, model, cfg), state, do_split=cfg.split_temporal, t=t)


# ---------------------------------------------------------------------------
# online driver


class Tracker:
    def __init__(self, calibration: Mapping[int, Homography], spatial_model: GraphModel,
                 temporal_model: GraphModel, cfg: TrackerConfig | None = None) -> None:
        if spatial_model.flavor != SPATIAL or temporal_model.flavor != TEMPORAL:
            raise ValueError("expected a spatial model and a temporal model")
        self.cfg = cfg or TrackerConfig()
        self.calibration = dict(calibration)
        self.models = (spatial_model, temporal_model)
        self.state = TrackState(len(self.calibration), self.cfg.window, self.cfg.epsilon)

    def step(self, frame: int, records: Sequence[DetectionRecord]) -> FrameResult:
        st, cfg = self.state, self.cfg
        if st.current_time is not None and frame <= st.current_time:
            raise OrderingError(f"frame {frame} arrives after frame {st.current_time}")
        if any(r.frame != frame for r in records):
            raise ValueError(f"records passed for frame {frame} carry other frame numbers")
        st.current_time = frame
        nodes = detection_nodes(records, self.calibration, st, cfg.normalize_appearance)
        g_s = spatial_associate(nodes, self.models[0], st, cfg)
        if st.previous is None:
            comps = connected_components(g_s)
            agg = [aggregate(st.new_node_id(), [g_s.nodes[i] for i in c], cfg.aggregate_position) for c in comps]
            for n in agg:
                n.tracklet_id = st.new_tracklet_id()
                n.speed = np.zeros(2)
            g_t = Graph(TEMPORAL, agg)
        else:
            g_t = reconfigure(g_s, st.previous, st, frame, cfg.aggregate_position)
            g_t = temporal_associate(g_t, self.models[1], st, cfg, frame)
        st.previous = g_t
        by_member = {}
        for n in g_t.nodes.values():
            if n.timestamp == frame:
                for m in n.members:
                    by_member[m] = n.tracklet_id
        out = []
        for k, r in enumerate(records):
            conf = 1.0 if r.confidence is None else float(r.confidence)
            gp = nodes[k].position
            out.append(Assignment(r.camera_id, r.bbox, by_member[k], conf, (float(gp[0]), float(gp[1]))))
        return FrameResult(frame, out)


def track_sequence(stream: Iterable[tuple[int, Sequence[DetectionRecord]]], calibration: Mapping[int, Homography],
                   spatial_model: GraphModel, temporal_model: GraphModel,
                   cfg: TrackerConfig | None = None) -> list[FrameResult]:
    tracker = Tracker(calibration, spatial_model, temporal_model, cfg)
    return [tracker.step(frame, recs) for frame, recs in stream]
