"""Synthetic train-then-track experiments shared by the scripts and the acceptance tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .config import RunConfig
from .dataio import TrackRecord, group_by_frame
from .metrics import EvalReport, evaluate
from .neural import GraphModel
from .synth import Scene, SceneSpec, generate, ground_truth_export, occlusion_counts
from .training import train
from .association import track_sequence

log = logging.getLogger(__name__)

ABLATIONS = {
    "baseline": {},
    "no-appearance": {"no_appearance": True},
    "no-projection": {"no_projection": True},
    "no-speed": {"no_speed": True},
    "no-split": {"no_split_spatial": True, "no_split_temporal": True},
}
# ablations that only change inference reuse the baseline weights
INFERENCE_ONLY = {"no-split"}


@dataclass
class Outcome:
    report: EvalReport
    models: dict[str, GraphModel]
    tracks: list[TrackRecord]
    occluded_ids: list[int] = field(default_factory=list)

    def occluded_switches(self) -> int:
        per = self.report.id_switches_per_gt
        return sum(per.get(i, 0) for i in self.occluded_ids)


def held_out_spec(spec: SceneSpec, frames: int = 60, seed_offset: int = 1000) -> SceneSpec:
    return replace(spec, frames=frames, seed=spec.seed + seed_offset)


def train_models(scene: Scene, cfg: RunConfig) -> dict[str, GraphModel]:
    calib = {h.camera_id: h for h in scene.homographies}
    return train(group_by_frame(scene.records), calib, cfg.train_config()).models


def track_scene(scene: Scene, models: dict[str, GraphModel], cfg: RunConfig) -> list[TrackRecord]:
    calib = {h.camera_id: h for h in scene.homographies}
    stream = group_by_frame(scene.records)
    results = track_sequence(stream, calib, models["spatial"], models["temporal"], cfg.tracker_config())
    return [TrackRecord(res.frame, a.camera_id, a.tracklet_id, a.bbox, a.ground, a.confidence)
            for res in results for a in res.assignments]


def run(train_scene: Scene, test_scene: Scene, cfg: RunConfig,
        models: dict[str, GraphModel] | None = None) -> Outcome:
    if models is None:
        models = train_models(train_scene, cfg)
    tracks = track_scene(test_scene, models, cfg)
    report = evaluate(ground_truth_export(test_scene), tracks, cfg.match_threshold)
    occluded = [i for i, n in enumerate(occlusion_counts(test_scene)) if n > 0]
    return Outcome(report, models, tracks, occluded)


def ablate(spec: SceneSpec, base: RunConfig, names=tuple(ABLATIONS)) -> dict[str, Outcome]:
    """Train and evaluate each named ablation on a held-out scene from ``spec``."""
    train_scene, test_scene = generate(spec), generate(held_out_spec(spec))
    out: dict[str, Outcome] = {}
    baseline_models = None
    for name in names:
        cfg = base.override(**ABLATIONS[name])
        reuse = baseline_models if name in INFERENCE_ONLY else None
        out[name] = run(train_scene, test_scene, cfg, reuse)
        if name == "baseline":
            baseline_models = out[name].models
        r = out[name].report
        log.info("%s: IDF1 %.4f MOTA %.4f IDSW %d", name, r.idf1, r.mota, r.id_switches)
    return out
