"""Command-line entry point: ``rest-mot synth|train|track|eval``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The log level comes from ``REST_LOG_LEVEL`` (default WARNING) or ``-v``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import dataio
from .association import Tracker
from .config import ConfigError, RunConfig
from .dataio import MotRow, TrackRecord
from .metrics import evaluate
from .neural import ShapeError
from .synth import SceneSpec, generate, ground_truth_export

log = logging.getLogger("rest_mot")

DETECTIONS = "detections.jsonl"
CALIBRATION = "calibration.json"
GROUND_TRUTH = "gt.csv"
WEIGHTS = "weights.bin"


class UsageError(Exception):
    pass


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{p}: no such file")
    return p


# ---------------------------------------------------------------------------
# run-config flags


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    g.add_argument("--iterations", dest="n_iter", type=int, help="message passing rounds L")
    g.add_argument("--window", type=int, help="temporal window M")
    g.add_argument("--epsilon", type=float, help="pruning threshold")
    g.add_argument("--seed", type=int)
    for name in ("no_split_spatial", "no_split_temporal", "no_appearance", "no_projection", "no_speed",
                 "normalize_appearance"):
        g.add_argument("--" + name.replace("_", "-"), dest=name, action="store_true", default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--drop-probability", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--lr", dest="base_lr", type=float)
    g.add_argument("--warmup-epochs", type=int)
    g.add_argument("--validation-fraction", type=float)
    g.add_argument("--grad-clip", type=float, help="per-sample gradient norm cap")


_RUN_KEYS = ("n_iter", "window", "epsilon", "seed", "no_split_spatial", "no_split_temporal", "no_appearance",
             "no_projection", "no_speed", "normalize_appearance", "epochs", "drop_probability", "gamma", "alpha",
             "base_lr", "warmup_epochs", "validation_fraction", "grad_clip")


def run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_dict(dataio.read_json(_need_file(args.config)))
    return cfg.override(**{k: getattr(args, k, None) for k in _RUN_KEYS})


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    base = dataio.read_json(_need_file(args.spec)) if args.spec else {}
    changes = {k: getattr(args, k) for k in ("seed", "frames", "identities", "cameras", "occlusion_drop",
                                             "occlusion_mode", "feature_noise_sigma") if getattr(args, k) is not None}
    try:
        spec = SceneSpec.from_dict({**SceneSpec().to_dict(), **base, **changes})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad scene spec: {exc}") from None
    scene = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_detections(out / DETECTIONS, scene.records)
    dataio.write_calibration(out / CALIBRATION, scene.homographies, (spec.image_width, spec.image_height))
    dataio.write_tracks(out / GROUND_TRUTH, ground_truth_export(scene))
    dataio.write_json(out / "scene.json", spec.to_dict())
    print(f"frames={spec.frames} cameras={spec.cameras} identities={spec.identities} detections={len(scene.records)}")
    return 0


def _corpus_paths(args) -> tuple[Path, Path]:
    det = args.detections or (Path(args.corpus) / DETECTIONS if args.corpus else None)
    cal = args.calibration or (Path(args.corpus) / CALIBRATION if args.corpus else None)
    if det is None or cal is None:
        raise UsageError("give --corpus DIR or both --detections and --calibration")
    return _need_file(det), _need_file(cal)


def cmd_train(args) -> int:
    from .training import train

    cfg = run_config(args)
    det, cal = _corpus_paths(args)
    stream = dataio.parse_detections(det)
    if not stream:
        raise UsageError(f"{det}: corpus has no detections")
    calibration = dataio.read_calibration(cal)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    result = train(stream, calibration, cfg.train_config(), on_epoch=lambda rec: dataio.append_jsonl(log_path, rec))
    dataio.write_weights(out / WEIGHTS, [result.models[f] for f in ("spatial", "temporal") if f in result.models])
    dataio.write_json(out / "run_config.json", cfg.to_dict())
    print(f"best epochs {result.best_epoch}; validation F1 {result.best_f1}; weights -> {out / WEIGHTS}")
    return 0


def _track_one(det: Path, calibration_path: Path, weights_path: Path, out: Path, cfg: RunConfig) -> dict:
    calibration = dataio.read_calibration(calibration_path)
    models = dataio.read_weights(weights_path)
    for flavor in ("spatial", "temporal"):
        if flavor not in models:
            raise ShapeError(f"{weights_path}: no {flavor} model")
        dataio.check_model_shapes(models[flavor], flavor)
    stream = dataio.parse_detections(det)
    tracker = Tracker(calibration, models["spatial"], models["temporal"], cfg.tracker_config())
    out.mkdir(parents=True, exist_ok=True)
    files = {c: open(out / f"cam{c}.txt", "w", encoding="utf-8") for c in sorted(calibration)}
    tracks = []
    latency = []
    try:
        for frame, recs in stream:
            t0 = time.perf_counter()
            res = tracker.step(frame, recs)
            latency.append(time.perf_counter() - t0)
            by_cam: dict[int, list[MotRow]] = {}
            for a in res.assignments:
                by_cam.setdefault(a.camera_id, []).append(MotRow(frame, a.tracklet_id, a.bbox, a.confidence))
                tracks.append(TrackRecord(frame, a.camera_id, a.tracklet_id, a.bbox, a.ground, a.confidence))
            for cam, rows in by_cam.items():
                files[cam].write(dataio.mot_lines(rows))
                files[cam].flush()
    finally:
        for fh in files.values():
            fh.close()
    dataio.write_tracks(out / "tracks.csv", tracks)
    return {
        "sequence": det.name,
        "frames": len(stream),
        "detections": len(tracks),
        "tracklets": len({r.track_id for r in tracks}),
        "mean_latency_ms": 1000 * sum(latency) / len(latency) if latency else 0.0,
    }


def cmd_track(args) -> int:
    cfg = run_config(args)
    dets = [_need_file(d) for d in args.detections]
    cal, weights = _need_file(args.calibration), _need_file(args.weights)
    out = Path(args.out)
    outs = [out] if len(dets) == 1 else [out / d.stem for d in dets]
    jobs = max(1, args.jobs)
    if jobs > 1 and len(dets) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_track_one, dets, [cal] * len(dets), [weights] * len(dets), outs,
                                      [cfg] * len(dets)))
    else:
        summaries = [_track_one(d, cal, weights, o, cfg) for d, o in zip(dets, outs)]
    for s in summaries:
        print(f"{s['sequence']}: frames={s['frames']} detections={s['detections']} tracklets={s['tracklets']} "
              f"mean_latency_ms={s['mean_latency_ms']:.2f}")
    return 0


def cmd_eval(args) -> int:
    gt = dataio.read_tracks(_need_file(args.gt))
    hyp = dataio.read_tracks(_need_file(args.hyp))
    gate = args.gate
    if gate is None:
        gate = run_config(args).match_threshold if args.config else 1.0
    report = evaluate(gt, hyp, gate, args.mode)
    print(report.table())
    if args.report:
        dataio.write_json(args.report, report.to_dict())
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rest-mot", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-camera corpus")
    p.add_argument("--spec", help="JSON file with SceneSpec fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--identities", type=int)
    p.add_argument("--cameras", type=int)
    p.add_argument("--occlusion-drop", type=float)
    p.add_argument("--occlusion-mode", choices=("geometric", "random"))
    p.add_argument("--feature-noise-sigma", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the spatial and temporal models")
    p.add_argument("--corpus", help="directory holding detections.jsonl and calibration.json")
    p.add_argument("--detections")
    p.add_argument("--calibration")
    p.add_argument("--out", required=True)
    _add_run_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track a detection stream online")
    p.add_argument("--detections", action="append", required=True, help="repeat for several sequences")
    p.add_argument("--calibration", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="sequences tracked in parallel")
    _add_run_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a hypothesis track file against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--gate", type=float, help="ground-plane match threshold in metres (default 1.0)")
    p.add_argument("--mode", choices=("multicamera", "per-camera"), default="multicamera")
    p.add_argument("--report", help="write the structured report here (JSON)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = os.environ.get("REST_LOG_LEVEL", "WARNING").upper()
    if args.verbose:
        level = "INFO" if args.verbose == 1 else "DEBUG"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"rest-mot {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("failure", exc_info=True)
        print(f"rest-mot {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
