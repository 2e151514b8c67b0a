"""Message passing over spatial/temporal graphs and the matching reverse pass.

A graph is first flattened into :class:`GraphTensors` (dense inputs plus
canonical ``src < dst`` edge index arrays). ``forward`` then runs the feature
encoders, ``n_iter`` rounds of edge update / summed node update, and the
classifier at every round. ``backward`` walks the same computation in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .geometry import appearance_distances, pair_norms
from .graph import SPATIAL, Graph
from .neural import (
    CLASSIFIER,
    EDGE_DIM,
    EDGE_FEATURE_ENCODER,
    EDGE_MESSAGE_ENCODER,
    NODE_DIM,
    NODE_FEATURE_ENCODER,
    NODE_MESSAGE_ENCODER,
    GraphModel,
    ShapeError,
    focal_loss_logits,
    sigmoid,
)

DEFAULT_ITERATIONS = 4


@dataclass(frozen=True)
class FeatureMask:
    """Which raw cues feed the encoders; a disabled cue is zeroed, not removed."""

    appearance: bool = True
    projection: bool = True
    speed: bool = True


@dataclass
class GraphTensors:
    flavor: str
    node_input: np.ndarray  # (N, 512) spatial, (N, 514) temporal
    edge_input: np.ndarray  # (E, 4) spatial, (E, 6) temporal
    src: np.ndarray  # (E,) row index of the smaller node id
    dst: np.ndarray
    node_ids: np.ndarray
    labels: np.ndarray | None = None
    aggregation: str = "sum"
    _scatter: sparse.csr_matrix | None = field(default=None, init=False, repr=False)
    _incidence: tuple | None = field(default=None, init=False, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.node_input.shape[0]

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    def message_weights(self) -> np.ndarray | None:
        """Per-message aggregation weight: ``None`` for a plain sum, 1/deg(receiver) for a mean."""
        if self.aggregation == "sum":
            return None
        recv = np.concatenate([self.src, self.dst])
        deg = np.bincount(recv, minlength=self.n_nodes).astype(np.float64)
        return 1.0 / deg[recv]

    def scatter(self) -> sparse.csr_matrix:
        """(N, 2E) matrix aggregating the 2E directed messages into their receivers."""
        if self._scatter is None:
            e = self.n_edges
            recv = np.concatenate([self.src, self.dst])
            w = self.message_weights()
            self._scatter = sparse.csr_matrix(
                (np.ones(2 * e) if w is None else w, (recv, np.arange(2 * e))), shape=(self.n_nodes, 2 * e)
            )
        return self._scatter

    @property
    def msg_sender(self) -> np.ndarray:
        """Sender row of each of the 2E directed messages (receivers are src then dst)."""
        return np.concatenate([self.dst, self.src])

    def incidence(self) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
        """(N, E) one-hot matrices of the src and dst endpoint of every edge."""
        if self._incidence is None:
            e, n = self.n_edges, self.n_nodes
            cols = np.arange(e)
            self._incidence = (sparse.csr_matrix((np.ones(e), (self.src, cols)), shape=(n, e)),
                               sparse.csr_matrix((np.ones(e), (self.dst, cols)), shape=(n, e)))
        return self._incidence

    def subset(self, keep: np.ndarray) -> "GraphTensors":
        """Induced subgraph on the rows where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(self.n_nodes, -1)
        remap[keep] = np.arange(int(keep.sum()))
        ek = keep[self.src] & keep[self.dst]
        return GraphTensors(
            self.flavor,
            self.node_input[keep],
            self.edge_input[ek],
            remap[self.src[ek]],
            remap[self.dst[ek]],
            self.node_ids[keep],
            None if self.labels is None else self.labels[ek],
            self.aggregation,
        )


def graph_tensors(g: Graph, mask: FeatureMask = FeatureMask(), aggregation: str = "sum") -> GraphTensors:
    """Raw node/edge inputs for ``g`` in ascending node-id / edge-key order."""
    ids = g.node_ids()
    index = {nid: i for i, nid in enumerate(ids)}
    keys = g.edge_keys()
    src = np.array([index[u] for u, _ in keys], dtype=np.intp)
    dst = np.array([index[v] for _, v in keys], dtype=np.intp)
    nodes = [g.nodes[i] for i in ids]
    if nodes:
        D = np.stack([n.appearance for n in nodes]).astype(np.float64)
        P = np.stack([n.position for n in nodes]).astype(np.float64)
    else:
        D = np.zeros((0, 512))
        P = np.zeros((0, 2))
    dp = pair_norms(P[src] - P[dst]) if keys else np.zeros((0, 2))
    dd = appearance_distances(D[src], D[dst]) if keys else np.zeros((0, 2))
    if not mask.appearance:
        D = np.zeros_like(D)
        dd = np.zeros_like(dd)
    if not mask.projection:
        dp = np.zeros_like(dp)
    if g.flavor == SPATIAL:
        node_input = D
        edge_input = np.concatenate([dp, dd], axis=1)
    else:
        T = np.array([n.timestamp for n in nodes], dtype=np.float64)
        S = np.stack([n.speed if n.speed is not None else np.zeros(2) for n in nodes]) if nodes else np.zeros((0, 2))
        ds = temporal_speed_terms(P, T, S, src, dst)
        if not mask.speed:
            ds = np.zeros_like(ds)
        Pn = P if mask.projection else np.zeros_like(P)
        node_input = np.concatenate([D, Pn], axis=1)
        edge_input = np.concatenate([dp, dd, ds], axis=1)
    labels = None
    if keys and all(g.edges[k].label is not None for k in keys):
        labels = np.array([g.edges[k].label for k in keys], dtype=np.int8)
    elif nodes and all(n.object_id is not None for n in nodes):
        obj = np.array([n.object_id for n in nodes])
        labels = (obj[src] == obj[dst]).astype(np.int8)
    return GraphTensors(g.flavor, node_input, edge_input, src, dst, np.array(ids, dtype=np.int64), labels,
                        aggregation)


def temporal_speed_terms(P, T, S, src, dst) -> np.ndarray:
    """[L1, L2] of (provisional speed of the later endpoint) - (stored speed of the earlier one).

    The provisional speed is the displacement per frame implied by linking the
    two endpoints; the earlier endpoint's stored speed is relative to its own
    predecessor (zero at first appearance).
    """
    if len(src) == 0:
        return np.zeros((0, 2))
    later_is_dst = T[dst] > T[src]
    late = np.where(later_is_dst, dst, src)
    early = np.where(later_is_dst, src, dst)
    dt = T[late] - T[early]
    if np.any(dt <= 0):
        raise ValueError("temporal edge joins nodes with equal timestamps")
    prov = (P[late] - P[early]) / dt[:, None]
    return pair_norms(prov - S[early])


@dataclass
class MpnTrace:
    """Node/edge features for levels 0..L, classifier logits for levels 1..L."""

    node_features: list[np.ndarray]
    edge_features: list[np.ndarray]
    logits: list[np.ndarray | None]
    caches: dict | None = None

    @property
    def iterations(self) -> int:
        return len(self.node_features) - 1

    def scores(self, level: int | None = None) -> np.ndarray:
        lvl = self.iterations if level is None else level
        if lvl < 1 or self.logits[lvl] is None:
            raise ValueError(f"no classifier output at level {lvl}")
        return sigmoid(self.logits[lvl])


def _check(t: GraphTensors, m: GraphModel) -> None:
    if t.flavor != m.flavor:
        raise ValueError(f"{t.flavor} graph given to a {m.flavor} model")
    if t.node_input.shape[1] != m[NODE_FEATURE_ENCODER].in_dim:
        raise ShapeError(f"node input width {t.node_input.shape[1]} != {m[NODE_FEATURE_ENCODER].in_dim}")
    if t.edge_input.shape[1] != m[EDGE_FEATURE_ENCODER].in_dim:
        raise ShapeError(f"edge input width {t.edge_input.shape[1]} != {m[EDGE_FEATURE_ENCODER].in_dim}")


def init_features(t: GraphTensors, m: GraphModel, keep_cache: bool = False) -> MpnTrace:
    _check(t, m)
    hv, cv = m[NODE_FEATURE_ENCODER].forward(t.node_input)
    he, ce = m[EDGE_FEATURE_ENCODER].forward(t.edge_input)
    caches = {"nfe": cv, "efe": ce, "eme": [None], "nme": [None], "cls": [None]} if keep_cache else None
    return MpnTrace([hv], [he], [None], caches)


def run_mpn(t: GraphTensors, m: GraphModel, trace: MpnTrace, n_iter: int = DEFAULT_ITERATIONS,
            classify_all: bool = False) -> MpnTrace:
    """Append levels 1..n_iter to ``trace``; logits are kept for every level or only the last.

    The first layer of each message encoder acts on a concatenation, so it is
    evaluated block-wise: node blocks once per node, then gathered per edge.
    """
    (W1, b1), (W2, b2) = [(l.weight, l.bias) for l in m[EDGE_MESSAGE_ENCODER].layers]
    (M1, c1), (M2, c2) = [(l.weight, l.bias) for l in m[NODE_MESSAGE_ENCODER].layers]
    W1s, W1e, W1d = W1[:, :NODE_DIM], W1[:, NODE_DIM:NODE_DIM + EDGE_DIM], W1[:, NODE_DIM + EDGE_DIM:]
    M1n, M1e = M1[:, :NODE_DIM], M1[:, NODE_DIM:]
    cls = m[CLASSIFIER]
    src, dst = t.src, t.dst
    E, N = t.n_edges, t.n_nodes
    S = t.scatter()
    keep = trace.caches is not None
    for level in range(1, n_iter + 1):
        hv, he = trace.node_features[-1], trace.edge_features[-1]
        want_logits = classify_all or level == n_iter
        if E == 0:
            trace.node_features.append(np.zeros((N, NODE_DIM)))
            trace.edge_features.append(np.zeros((0, EDGE_DIM)))
            trace.logits.append(np.zeros(0) if want_logits else None)
            if keep:
                for k in ("eme", "nme", "cls"):
                    trace.caches[k].append(None)
            continue
        # edge update on [h_src, h_e, h_dst]
        A = hv @ W1s.T + b1
        C = hv @ W1d.T
        a1 = he @ W1e.T
        a1 += A[src]
        a1 += C[dst]
        np.maximum(a1, 0.0, out=a1)
        he_new = a1 @ W2.T
        he_new += b2
        np.maximum(he_new, 0.0, out=he_new)
        # messages [h_neighbor, h_e]: first E go to src (from dst), next E to dst (from src)
        Q = hv @ M1n.T + c1
        R = he_new @ M1e.T
        g1 = Q[t.msg_sender]
        g1[:E] += R
        g1[E:] += R
        np.maximum(g1, 0.0, out=g1)
        msgs = g1 @ M2.T
        msgs += c2
        np.maximum(msgs, 0.0, out=msgs)
        trace.node_features.append(np.asarray(S @ msgs))
        trace.edge_features.append(he_new)
        logit = c_c = None
        if want_logits:
            _, c_c = cls.forward(he_new)
            logit = c_c[-1][1][:, 0]
        trace.logits.append(logit)
        if keep:
            trace.caches["eme"].append(a1)
            trace.caches["nme"].append((g1, msgs))
            trace.caches["cls"].append(c_c)
    return trace


def classify_edges(trace: MpnTrace, m: GraphModel, level: int | None = None) -> np.ndarray:
    lvl = trace.iterations if level is None else level
    if not 0 <= lvl <= trace.iterations:
        raise ValueError(f"trace has no level {lvl}")
    out, _ = m[CLASSIFIER].forward(trace.edge_features[lvl])
    return out[:, 0]


def forward(t: GraphTensors, m: GraphModel, n_iter: int = DEFAULT_ITERATIONS,
            training: bool = False) -> MpnTrace:
    trace = init_features(t, m, keep_cache=training)
    return run_mpn(t, m, trace, n_iter, classify_all=training)


def backward(t: GraphTensors, m: GraphModel, trace: MpnTrace, d_logits: list[np.ndarray | None]) -> dict:
    """Parameter gradients given d(loss)/d(logit) per level (index 0 unused)."""
    if trace.caches is None:
        raise RuntimeError("backward needs a trace produced with training=True")
    L = trace.iterations
    grads = m.zero_grads()
    caches = trace.caches
    N, E = t.n_nodes, t.n_edges
    d_hv = np.zeros((N, NODE_DIM))
    d_he = np.zeros((E, EDGE_DIM))
    if E:
        W1, W2 = [l.weight for l in m[EDGE_MESSAGE_ENCODER].layers]
        M1, M2 = [l.weight for l in m[NODE_MESSAGE_ENCODER].layers]
        W1s, W1e, W1d = W1[:, :NODE_DIM], W1[:, NODE_DIM:NODE_DIM + EDGE_DIM], W1[:, NODE_DIM + EDGE_DIM:]
        M1n, M1e = M1[:, :NODE_DIM], M1[:, NODE_DIM:]
        (gW1, gb1), (gW2, gb2) = grads[EDGE_MESSAGE_ENCODER]
        (gM1, gc1), (gM2, gc2) = grads[NODE_MESSAGE_ENCODER]
        Gsrc, Gdst = t.incidence()
        recv = np.concatenate([t.src, t.dst])
        w = t.message_weights()
        for level in range(L, 0, -1):
            hv, he = trace.node_features[level - 1], trace.edge_features[level - 1]
            he_new = trace.edge_features[level]
            if d_logits[level] is not None:
                d_he += m[CLASSIFIER].backward(
                    caches["cls"][level], d_logits[level][:, None], grads[CLASSIFIER], from_logits=True
                )
            a1 = caches["eme"][level]
            g1, msgs = caches["nme"][level]
            # node update
            d_y2 = d_hv[recv]
            if w is not None:
                d_y2 *= w[:, None]
            d_y2 *= msgs > 0
            gM2 += d_y2.T @ g1
            gc2 += d_y2.sum(axis=0)
            d_y1 = d_y2 @ M2
            d_y1 *= g1 > 0
            gc1 += d_y1.sum(axis=0)
            top, bottom = d_y1[:E], d_y1[E:]
            d_R = top + bottom
            d_Q = np.asarray(Gdst @ top)
            d_Q += Gsrc @ bottom
            gM1[:, :NODE_DIM] += d_Q.T @ hv
            gM1[:, NODE_DIM:] += d_R.T @ he_new
            d_prev_hv = d_Q @ M1n
            d_he += d_R @ M1e
            # edge update
            d_he *= he_new > 0
            gW2 += d_he.T @ a1
            gb2 += d_he.sum(axis=0)
            d_z1 = d_he @ W2
            d_z1 *= a1 > 0
            gb1 += d_z1.sum(axis=0)
            d_A = np.asarray(Gsrc @ d_z1)
            d_C = np.asarray(Gdst @ d_z1)
            gW1[:, :NODE_DIM] += d_A.T @ hv
            gW1[:, NODE_DIM + EDGE_DIM:] += d_C.T @ hv
            gW1[:, NODE_DIM:NODE_DIM + EDGE_DIM] += d_z1.T @ he
            d_prev_hv += d_A @ W1s
            d_prev_hv += d_C @ W1d
            d_he = d_z1 @ W1e
            d_hv = d_prev_hv
    m[NODE_FEATURE_ENCODER].backward(caches["nfe"], d_hv, grads[NODE_FEATURE_ENCODER])
    if E:
        m[EDGE_FEATURE_ENCODER].backward(caches["efe"], d_he, grads[EDGE_FEATURE_ENCODER])
    return grads


def loss_and_grads(t: GraphTensors, m: GraphModel, n_iter: int = DEFAULT_ITERATIONS,
                   gamma: float = 2.0, alpha: float | None = 0.25):
    """Focal loss summed over edges and levels 1..n_iter, its gradients, and the trace."""
    if t.labels is None:
        raise ValueError("training graph has no edge labels")
    trace = forward(t, m, n_iter, training=True)
    total = 0.0
    d_logits: list = [None]
    for level in range(1, n_iter + 1):
        loss, dz = focal_loss_logits(trace.logits[level], t.labels, gamma, alpha)
        total += float(loss.sum())
        d_logits.append(dz)
    return total, backward(t, m, trace, d_logits), trace
