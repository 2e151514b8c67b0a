"""Supervised training of the spatial and temporal graph models."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataio import DetectionRecord, Stream
from .geometry import Homography
from .graph import FLAVORS, SPATIAL, TEMPORAL, Graph, Node, build_spatial_graph
from .mpn import DEFAULT_ITERATIONS, FeatureMask, GraphTensors, forward, graph_tensors, loss_and_grads
from .neural import AdamState, GraphModel, NonFiniteGradient, adam_step, init_model
from .association import detection_nodes

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainSample:
    graph: Graph
    flavor: str
    frame: int


@dataclass
class TrainConfig:
    epochs: int = 100
    drop_probability: float = 0.1
    window: int = 3
    seed: int = 0
    gamma: float = 2.0
    alpha: float | None = 0.25
    validation_fraction: float = 0.1
    n_iter: int = DEFAULT_ITERATIONS
    base_lr: float = 0.01
    warmup_epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epsilon: float = 0.9  # threshold for the validation edge F1
    features: FeatureMask = field(default_factory=FeatureMask)
    normalize_appearance: bool = False
    init_scheme: str = "linear-default"
    aggregation: str = "sum"
    grad_clip: float | None = 1.0  # global L2 norm per sample; None disables
    flavors: tuple[str, ...] = FLAVORS

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop_probability must lie in [0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.window < 2:
            raise ValueError("window M must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive or None")
        unknown = set(self.flavors) - set(FLAVORS)
        if unknown:
            raise ValueError(f"unknown flavors {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flavors"] = list(self.flavors)
        return d


# ---------------------------------------------------------------------------
# samples


def _require_ids(records: Sequence[DetectionRecord]) -> None:
    for r in records:
        if r.gt_id is None:
            raise ValueError(f"detection at frame {r.frame}, camera {r.camera_id} has no ground-truth id")


def _label(g: Graph) -> Graph:
    for e in g.edges.values():
        e.label = int(g.nodes[e.u].object_id == g.nodes[e.v].object_id)
    return g


def build_spatial_samples(stream: Stream, calibration: Mapping[int, Homography],
                          normalize: bool = False) -> list[TrainSample]:
    out = []
    next_id = 0
    for frame, recs in stream:
        _require_ids(recs)
        nodes = detection_nodes(recs, calibration, normalize=normalize, first_id=next_id)
        next_id += len(nodes)
        out.append(TrainSample(_label(build_spatial_graph(nodes)), SPATIAL, frame))
    return out


def _camera_nodes(stream: Stream, calibration, camera: int, window: int, normalize: bool) -> dict[int, list[Node]]:
    """Nodes of one camera per frame, each with its speed against the same-id predecessor."""
    per_frame: dict[int, list[Node]] = {}
    last_seen: dict[int, tuple[int, np.ndarray]] = {}
    next_id = 0
    for frame, recs in stream:
        recs = [r for r in recs if r.camera_id == camera]
        _require_ids(recs)
        nodes = detection_nodes(recs, calibration, normalize=normalize, first_id=next_id)
        next_id += len(nodes)
        for n in nodes:
            prev = last_seen.get(n.object_id)
            if prev is not None and frame - prev[0] <= window - 1:
                n.speed = (n.position - prev[1]) / (frame - prev[0])
            else:
                n.speed = np.zeros(2)
        for n in nodes:
            last_seen[n.object_id] = (frame, n.position)
        per_frame[frame] = nodes
    return per_frame


def _window_graph(per_frame: dict[int, list[Node]], frame: int, window: int, id_base: int) -> Graph:
    members = [n for f in range(frame - window + 1, frame + 1) for n in per_frame.get(f, [])]
    nodes = [Node(id_base + k, list(n.camera_ids), n.timestamp, list(n.bboxes), n.appearance, n.position,
                  speed=n.speed, object_id=n.object_id) for k, n in enumerate(members)]
    g = Graph(TEMPORAL, nodes)
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.timestamp != b.timestamp:
                g.add_edge(a.node_id, b.node_id)
    return _label(g)


def build_temporal_samples(stream: Stream, calibration: Mapping[int, Homography], camera: int, window: int = 3,
                           normalize: bool = False) -> list[TrainSample]:
    """Sliding windows of ``window`` frames of one camera, shortened at the start of the stream."""
    if window < 2:
        raise ValueError("window M must be >= 2")
    per_frame = _camera_nodes(stream, calibration, camera, window, normalize)
    out = []
    for frame, _ in stream:
        g = _window_graph(per_frame, frame, window, 0)
        if g.nodes:
            out.append(TrainSample(g, TEMPORAL, frame))
    return out


def build_temporal_samples_all(stream: Stream, calibration: Mapping[int, Homography], window: int = 3,
                               normalize: bool = False) -> list[TrainSample]:
    """Per frame, the disjoint union over cameras of each camera's window graph."""
    if window < 2:
        raise ValueError("window M must be >= 2")
    per_cam = {c: _camera_nodes(stream, calibration, c, window, normalize) for c in sorted(calibration)}
    out = []
    for frame, _ in stream:
        parts = []
        base = 0
        for c in sorted(per_cam):
            g = _window_graph(per_cam[c], frame, window, base)
            base += len(g.nodes)
            parts.append(g)
        union = disjoint_union(parts, TEMPORAL)
        if union.nodes:
            out.append(TrainSample(union, TEMPORAL, frame))
    return out


def disjoint_union(graphs: Sequence[Graph], flavor: str) -> Graph:
    g = Graph(flavor)
    for part in graphs:
        for n in part.nodes.values():
            g.add_node(n)
        for e in part.edges.values():
            g.add_edge(e.u, e.v, label=e.label)
    return g


def augment_drop(sample: TrainSample, p: float, rng: np.random.Generator) -> TrainSample:
    """Remove each node independently with probability ``p``; surviving edges keep their labels."""
    if not 0.0 <= p < 1.0:
        raise ValueError("drop probability must lie in [0, 1)")
    ids = sample.graph.node_ids()
    keep = rng.uniform(size=len(ids)) >= p
    kept = {i for i, k in zip(ids, keep) if k}
    g = Graph(sample.graph.flavor, [sample.graph.nodes[i] for i in ids if i in kept])
    for (u, v), e in sample.graph.edges.items():
        if u in kept and v in kept:
            g.add_edge(u, v, label=e.label)
    return TrainSample(g, sample.flavor, sample.frame)


def drop_tensors(t: GraphTensors, p: float, rng: np.random.Generator) -> GraphTensors:
    """Tensor-level equivalent of :func:`augment_drop` (same draws, same surviving nodes)."""
    if p == 0.0:
        return t
    return t.subset(rng.uniform(size=t.n_nodes) >= p)


# ---------------------------------------------------------------------------
# training loop


def split_stream(stream: Stream, validation_fraction: float) -> tuple[Stream, Stream]:
    """Last ``ceil(fraction * frames)`` frames form the validation block."""
    n_val = math.ceil(validation_fraction * len(stream)) if validation_fraction > 0 else 0
    if n_val >= len(stream) and n_val > 0:
        n_val = len(stream) - 1
    return stream[: len(stream) - n_val], stream[len(stream) - n_val:]


def samples_for(flavor: str, stream: Stream, calibration, cfg: TrainConfig) -> list[TrainSample]:
    if flavor == SPATIAL:
        return build_spatial_samples(stream, calibration, cfg.normalize_appearance)
    return build_temporal_samples_all(stream, calibration, cfg.window, cfg.normalize_appearance)


def edge_f1(model: GraphModel, tensors: Sequence[GraphTensors], threshold: float, n_iter: int) -> float:
    tp = fp = fn = 0
    for t in tensors:
        if t.n_edges == 0:
            continue
        pred = forward(t, model, n_iter).scores() > threshold
        y = t.labels.astype(bool)
        tp += int(np.sum(pred & y))
        fp += int(np.sum(pred & ~y))
        fn += int(np.sum(~pred & y))
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


@dataclass
class TrainResult:
    models: dict[str, GraphModel]
    log: list[dict]
    best_epoch: dict[str, int]
    best_f1: dict[str, float]


def clip_(g: np.ndarray, max_norm: float) -> float:
    """Rescale ``g`` in place so its L2 norm is at most ``max_norm``; returns the original norm."""
    n = float(np.linalg.norm(g))
    if n > max_norm:
        g *= max_norm / n
    return n


def _rng(seed: int, flavor: str, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, FLAVORS.index(flavor), purpose])


def train(stream: Stream, calibration: Mapping[int, Homography], cfg: TrainConfig | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train every flavor in ``cfg.flavors`` independently; keep the best-validation weights."""
    cfg = cfg or TrainConfig()
    train_part, val_part = split_stream(stream, cfg.validation_fraction)
    if not train_part:
        raise ValueError("no training frames")
    data = {}
    for flavor in cfg.flavors:
        tr = [graph_tensors(s.graph, cfg.features, cfg.aggregation)
              for s in samples_for(flavor, train_part, calibration, cfg)]
        tr = [t for t in tr if t.n_edges > 0]
        va = [graph_tensors(s.graph, cfg.features, cfg.aggregation)
              for s in samples_for(flavor, val_part, calibration, cfg)]
        if not tr:
            raise ValueError(f"no {flavor} training sample has an edge")
        data[flavor] = (tr, va)
        log.info("%s: %d training / %d validation samples", flavor, len(tr), len(va))
    models, opt, best, best_f1, best_epoch, order_rng, drop_rng = {}, {}, {}, {}, {}, {}, {}
    for flavor in cfg.flavors:
        m = init_model(flavor, _rng(cfg.seed, flavor, 0), cfg.init_scheme)
        models[flavor] = m
        opt[flavor] = AdamState.for_params([m.flat], beta1=cfg.beta1, beta2=cfg.beta2,
                                           epsilon=cfg.adam_epsilon, base_lr=cfg.base_lr,
                                           warmup_epochs=cfg.warmup_epochs)
        order_rng[flavor] = _rng(cfg.seed, flavor, 1)
        drop_rng[flavor] = _rng(cfg.seed, flavor, 2)
        best[flavor] = m.copy()
        best_f1[flavor] = -1.0
        best_epoch[flavor] = 0
    records = []
    lr = 0.0
    for epoch in range(1, cfg.epochs + 1):
        rec = {"epoch": epoch}
        t0 = time.perf_counter()
        for flavor in cfg.flavors:
            m, (tr, va) = models[flavor], data[flavor]
            params = [m.flat]
            losses = []
            for idx in order_rng[flavor].permutation(len(tr)):
                t = drop_tensors(tr[idx], cfg.drop_probability, drop_rng[flavor])
                if t.n_edges == 0:
                    continue
                loss, grads, _ = loss_and_grads(t, m, cfg.n_iter, cfg.gamma, cfg.alpha)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"{flavor}: non-finite loss at epoch {epoch}, sample {idx}")
                if cfg.grad_clip is not None:
                    clip_(grads.flat, cfg.grad_clip)
                try:
                    lr = adam_step(opt[flavor], params, [grads.flat], epoch)
                except NonFiniteGradient as exc:
                    raise TrainingDiverged(f"{flavor}: {exc} (epoch {epoch}, sample {idx})") from None
                losses.append(loss)
            f1 = edge_f1(m, va, cfg.epsilon, cfg.n_iter) if va else float("nan")
            if not va or f1 > best_f1[flavor]:
                best_f1[flavor] = f1
                best_epoch[flavor] = epoch
                best[flavor] = m.copy()
            rec[f"{flavor}_loss"] = float(np.mean(losses)) if losses else 0.0
            rec[f"{flavor}_val_f1"] = f1
            rec["lr"] = lr if losses else 0.0
        rec["seconds"] = round(time.perf_counter() - t0, 3)
        records.append(rec)
        log.info("epoch %d %s", epoch, {k: v for k, v in rec.items() if k != "epoch"})
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(best, records, best_epoch, best_f1)
