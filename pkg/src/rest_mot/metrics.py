"""CLEAR MOT and identity (IDF1) metrics on ground-plane positions."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataio import TrackRecord

DEFAULT_GATE = 1.0
_BIG = 1e9


class FrameMismatch(ValueError):
    pass


Frames = dict[int, tuple[np.ndarray, np.ndarray]]  # frame -> (ids (n,), positions (n, 2))


def ground_frames(records: Iterable[TrackRecord]) -> Frames:
    """One point per (frame, id): the mean ground position over every view carrying that id."""
    acc: dict[tuple[int, int], list] = defaultdict(list)
    for r in records:
        acc[(r.frame, r.track_id)].append(r.ground)
    frames: dict[int, list] = defaultdict(list)
    for (f, tid), pts in sorted(acc.items()):
        frames[f].append((tid, np.mean(pts, axis=0)))
    return {f: (np.array([t for t, _ in v], dtype=np.int64), np.array([p for _, p in v]).reshape(-1, 2))
            for f, v in frames.items()}


@dataclass
class EvalReport:
    idf1: float
    idp: float
    idr: float
    mota: float
    motp: float
    mostly_tracked: float
    mostly_lost: float
    id_switches: int
    false_positives: int
    false_negatives: int
    matches: int
    gt_count: int
    hyp_count: int
    trajectories: int
    mt_count: int
    ml_count: int
    idtp: int
    distance_sum: float
    gate: float
    id_switches_per_gt: dict[int, int] = field(default_factory=dict)
    per_sequence: dict[str, "EvalReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["id_switches_per_gt"] = {str(k): v for k, v in self.id_switches_per_gt.items()}
        d["per_sequence"] = {k: v.to_dict() for k, v in self.per_sequence.items()}
        return d

    def table(self) -> str:
        rows = [("all", self)] + sorted(self.per_sequence.items())
        head = f"{'seq':>8} {'IDF1':>6} {'MOTA':>6} {'MOTP':>6} {'MT':>6} {'ML':>6} {'FP':>6} {'FN':>6} {'IDSW':>5}"
        lines = [head]
        for name, r in rows:
            lines.append(f"{name:>8} {100 * r.idf1:6.1f} {100 * r.mota:6.1f} {r.motp:6.1f} {100 * r.mostly_tracked:6.1f}"
                         f" {100 * r.mostly_lost:6.1f} {r.false_positives:6d} {r.false_negatives:6d} {r.id_switches:5d}")
        return "\n".join(lines)


def _ratio(num: float, den: float, empty: float) -> float:
    return num / den if den > 0 else empty


def clear_mot(gt: Frames, hyp: Frames, gate: float = DEFAULT_GATE):
    """Per-frame assignment with continuity; returns counts and per-gt bookkeeping."""
    mapping: dict[int, int] = {}  # gt id -> hyp id matched in the previous frame
    last_match: dict[int, int] = {}  # gt id -> most recent hyp id it was matched to
    idsw: dict[int, int] = defaultdict(int)
    tracked: dict[int, int] = defaultdict(int)
    present: dict[int, int] = defaultdict(int)
    fp = fn = matches = 0
    dist_sum = 0.0
    empty = (np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
    for f in sorted(set(gt) | set(hyp)):
        g_ids, g_pos = gt.get(f, empty)
        h_ids, h_pos = hyp.get(f, empty)
        for o in g_ids:
            present[int(o)] += 1
        d = np.linalg.norm(g_pos[:, None, :] - h_pos[None, :, :], axis=2) if len(g_ids) and len(h_ids) else \
            np.zeros((len(g_ids), len(h_ids)))
        g_index = {int(o): i for i, o in enumerate(g_ids)}
        h_index = {int(h): j for j, h in enumerate(h_ids)}
        pairs = []
        used_g, used_h = set(), set()
        # keep last frame's correspondences that are still within the gate
        for o, h in sorted(mapping.items()):
            if o in g_index and h in h_index and d[g_index[o], h_index[h]] <= gate:
                pairs.append((g_index[o], h_index[h]))
                used_g.add(g_index[o])
                used_h.add(h_index[h])
        rest_g = [i for i in range(len(g_ids)) if i not in used_g]
        rest_h = [j for j in range(len(h_ids)) if j not in used_h]
        if rest_g and rest_h:
            sub = d[np.ix_(rest_g, rest_h)]
            cost = np.where(sub <= gate, sub, _BIG)
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if cost[r, c] < _BIG:
                    gi, hj = rest_g[r], rest_h[c]
                    pairs.append((gi, hj))
                    o, h = int(g_ids[gi]), int(h_ids[hj])
                    if o in last_match and last_match[o] != h:
                        idsw[o] += 1
        new_mapping = {}
        for gi, hj in pairs:
            o, h = int(g_ids[gi]), int(h_ids[hj])
            new_mapping[o] = h
            last_match[o] = h
            tracked[o] += 1
            dist_sum += float(d[gi, hj])
        mapping = new_mapping
        matches += len(pairs)
        fn += len(g_ids) - len(pairs)
        fp += len(h_ids) - len(pairs)
    return {"fp": fp, "fn": fn, "matches": matches, "dist_sum": dist_sum, "idsw": dict(idsw),
            "tracked": dict(tracked), "present": dict(present)}


def id_overlap(gt: Frames, hyp: Frames, gate: float = DEFAULT_GATE):
    """Co-occurrence counts (frames within the gate) for every gt/hyp id pair."""
    g_list = sorted({int(o) for ids, _ in gt.values() for o in ids})
    h_list = sorted({int(h) for ids, _ in hyp.values() for h in ids})
    gi = {o: i for i, o in enumerate(g_list)}
    hi = {h: j for j, h in enumerate(h_list)}
    counts = np.zeros((len(g_list), len(h_list)), dtype=np.int64)
    for f in set(gt) & set(hyp):
        g_ids, g_pos = gt[f]
        h_ids, h_pos = hyp[f]
        d = np.linalg.norm(g_pos[:, None, :] - h_pos[None, :, :], axis=2)
        for a, b in zip(*np.nonzero(d <= gate)):
            counts[gi[int(g_ids[a])], hi[int(h_ids[b])]] += 1
    return g_list, h_list, counts


def idtp_optimal(counts: np.ndarray) -> int:
    if counts.size == 0:
        return 0
    rows, cols = linear_sum_assignment(-counts)
    return int(counts[rows, cols].sum())


def evaluate_frames(gt: Frames, hyp: Frames, gate: float = DEFAULT_GATE) -> EvalReport:
    c = clear_mot(gt, hyp, gate)
    gt_count = sum(len(ids) for ids, _ in gt.values())
    hyp_count = sum(len(ids) for ids, _ in hyp.values())
    _, _, counts = id_overlap(gt, hyp, gate)
    idtp = idtp_optimal(counts)
    idsw = sum(c["idsw"].values())
    ratios = [c["tracked"].get(o, 0) / n for o, n in c["present"].items()]
    mt = sum(r >= 0.8 for r in ratios)
    ml = sum(r <= 0.2 for r in ratios)
    n_traj = len(ratios)
    return EvalReport(
        idf1=_ratio(2 * idtp, gt_count + hyp_count, 1.0),
        idp=_ratio(idtp, hyp_count, 1.0),
        idr=_ratio(idtp, gt_count, 1.0),
        mota=1.0 - (c["fn"] + c["fp"] + idsw) / gt_count if gt_count else (1.0 if c["fp"] == 0 else -math.inf),
        motp=(1.0 - c["dist_sum"] / (c["matches"] * gate)) * 100.0 if c["matches"] else math.nan,
        mostly_tracked=_ratio(mt, n_traj, 1.0),
        mostly_lost=_ratio(ml, n_traj, 0.0),
        id_switches=idsw,
        false_positives=c["fp"],
        false_negatives=c["fn"],
        matches=c["matches"],
        gt_count=gt_count,
        hyp_count=hyp_count,
        trajectories=n_traj,
        mt_count=mt,
        ml_count=ml,
        idtp=idtp,
        distance_sum=c["dist_sum"],
        gate=gate,
        id_switches_per_gt={o: c["idsw"].get(o, 0) for o in sorted(c["present"])},
    )


def _check_frames(gt: list[TrackRecord], hyp: list[TrackRecord], per_camera: bool) -> None:
    if not gt or not hyp:
        return
    g_lo, g_hi = min(r.frame for r in gt), max(r.frame for r in gt)
    h_lo, h_hi = min(r.frame for r in hyp), max(r.frame for r in hyp)
    if h_lo < g_lo or h_hi > g_hi:
        raise FrameMismatch(f"hypothesis frames {h_lo}..{h_hi} fall outside ground-truth frames {g_lo}..{g_hi}")
    if per_camera:
        extra = {r.camera_id for r in hyp} - {r.camera_id for r in gt}
        if extra:
            raise FrameMismatch(f"hypothesis cameras {sorted(extra)} absent from ground truth")


def _merge(reports: dict[str, EvalReport], gate: float) -> EvalReport:
    rs = list(reports.values())
    gt_count = sum(r.gt_count for r in rs)
    hyp_count = sum(r.hyp_count for r in rs)
    idtp = sum(r.idtp for r in rs)
    fp, fn, idsw = (sum(getattr(r, k) for r in rs) for k in ("false_positives", "false_negatives", "id_switches"))
    matches = sum(r.matches for r in rs)
    dist = sum(r.distance_sum for r in rs)
    n_traj = sum(r.trajectories for r in rs)
    mt, ml = sum(r.mt_count for r in rs), sum(r.ml_count for r in rs)
    return EvalReport(
        idf1=_ratio(2 * idtp, gt_count + hyp_count, 1.0), idp=_ratio(idtp, hyp_count, 1.0),
        idr=_ratio(idtp, gt_count, 1.0),
        mota=1.0 - (fn + fp + idsw) / gt_count if gt_count else (1.0 if fp == 0 else -math.inf),
        motp=(1.0 - dist / (matches * gate)) * 100.0 if matches else math.nan,
        mostly_tracked=_ratio(mt, n_traj, 1.0), mostly_lost=_ratio(ml, n_traj, 0.0),
        id_switches=idsw, false_positives=fp, false_negatives=fn, matches=matches, gt_count=gt_count,
        hyp_count=hyp_count, trajectories=n_traj, mt_count=mt, ml_count=ml, idtp=idtp, distance_sum=dist,
        gate=gate, per_sequence=dict(reports),
    )


def evaluate(gt: list[TrackRecord], hyp: list[TrackRecord], match_threshold: float = DEFAULT_GATE,
             mode: str = "multicamera") -> EvalReport:
    """``multicamera``: one point per id per frame over all views; ``per-camera``: each view on its own."""
    if match_threshold <= 0:
        raise ValueError("match threshold must be positive")
    if mode not in ("multicamera", "per-camera"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    _check_frames(gt, hyp, mode == "per-camera")
    if mode == "multicamera":
        return evaluate_frames(ground_frames(gt), ground_frames(hyp), match_threshold)
    reports = {}
    for cam in sorted({r.camera_id for r in gt} | {r.camera_id for r in hyp}):
        g = ground_frames(r for r in gt if r.camera_id == cam)
        h = ground_frames(r for r in hyp if r.camera_id == cam)
        reports[f"cam{cam}"] = evaluate_frames(g, h, match_threshold)
    return _merge(reports, match_threshold)
