"""File formats: detection streams, calibration, track CSVs, MOT output, weights, logs.

Text formats write floats with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Homography
from .graph import APPEARANCE_DIM
from .neural import LAYER_WIDTHS, PERCEPTRON_NAMES, DenseLayer, GraphModel, Perceptron, ShapeError


class FormatError(ValueError):
    """A malformed input file; carries the path and (when known) the 1-based line."""

    def __init__(self, path, message: str, line: int | None = None) -> None:
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class SchemaError(FormatError):
    """A well-formed record with wrong field shapes or values."""


@dataclass
class DetectionRecord:
    frame: int
    camera_id: int
    bbox: tuple[float, float, float, float]
    feature: np.ndarray
    gt_id: int | None = None
    confidence: float | None = None

    def __post_init__(self) -> None:
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.shape != (APPEARANCE_DIM,):
            raise ValueError(f"feature must have {APPEARANCE_DIM} values, got shape {self.feature.shape}")
        self.bbox = tuple(float(v) for v in self.bbox)
        if len(self.bbox) != 4 or self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"bbox must be (x, y, w, h) with w, h > 0, got {self.bbox}")

    def to_json(self) -> dict:
        rec = {"frame": self.frame, "camera_id": self.camera_id, "bbox": list(self.bbox),
               "feature": self.feature.tolist()}
        if self.gt_id is not None:
            rec["gt_id"] = self.gt_id
        if self.confidence is not None:
            rec["confidence"] = self.confidence
        return rec

    def same_as(self, other: "DetectionRecord") -> bool:
        return (self.frame == other.frame and self.camera_id == other.camera_id and self.bbox == other.bbox
                and np.array_equal(self.feature, other.feature) and self.gt_id == other.gt_id
                and self.confidence == other.confidence)


Stream = list[tuple[int, list[DetectionRecord]]]


def group_by_frame(records: Iterable[DetectionRecord]) -> Stream:
    """Stable sort by (frame, camera_id) and group; within-camera input order is kept."""
    ordered = sorted(records, key=lambda r: (r.frame, r.camera_id))
    out: Stream = []
    for r in ordered:
        if not out or out[-1][0] != r.frame:
            out.append((r.frame, []))
        out[-1][1].append(r)
    return out


def flatten(stream: Stream) -> list[DetectionRecord]:
    return [r for _, recs in stream for r in recs]


# ---------------------------------------------------------------------------
# detections (JSON lines)


def write_detections(path, records: Iterable[DetectionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), separators=(",", ":")))
            fh.write("\n")


def _record_from_json(obj, path, lineno: int) -> DetectionRecord:
    if not isinstance(obj, dict):
        raise FormatError(path, "record is not an object", lineno)
    try:
        frame = obj["frame"]
        cam = obj["camera_id"]
        bbox = obj["bbox"]
        feat = obj["feature"]
    except KeyError as exc:
        raise SchemaError(path, f"missing field {exc.args[0]!r}", lineno) from None
    if not isinstance(frame, int) or not isinstance(cam, int) or frame < 0:
        raise SchemaError(path, "frame and camera_id must be non-negative integers", lineno)
    if not isinstance(feat, list) or len(feat) != APPEARANCE_DIM:
        n = len(feat) if isinstance(feat, list) else "non-list"
        raise SchemaError(path, f"feature length {n} != {APPEARANCE_DIM}", lineno)
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise SchemaError(path, "bbox must have 4 values", lineno)
    try:
        return DetectionRecord(frame, cam, tuple(bbox), np.array(feat, dtype=np.float64),
                               obj.get("gt_id"), obj.get("confidence"))
    except (ValueError, TypeError) as exc:
        raise SchemaError(path, str(exc), lineno) from None


def parse_detections(path) -> Stream:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, f"invalid JSON ({exc.msg})", lineno) from None
            records.append(_record_from_json(obj, path, lineno))
    return group_by_frame(records)


# ---------------------------------------------------------------------------
# calibration (JSON)


def write_calibration(path, homographies: Sequence[Homography], image_size: tuple[int, int] | None = None) -> None:
    doc = {"cameras": [{"camera_id": h.camera_id, "H": h.h.reshape(-1).tolist()} for h in homographies]}
    if image_size is not None:
        doc["image_size"] = list(image_size)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_calibration(path) -> dict[int, Homography]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON ({exc.msg})", exc.lineno) from None
    cams = doc.get("cameras") if isinstance(doc, dict) else None
    if not isinstance(cams, list):
        raise SchemaError(path, "expected an object with a 'cameras' list")
    out = {}
    for i, c in enumerate(cams):
        try:
            cid = int(c["camera_id"])
            vals = [float(v) for v in c["H"]]
        except (KeyError, TypeError, ValueError):
            raise SchemaError(path, f"camera entry {i} needs camera_id and 9 H values") from None
        if len(vals) != 9:
            raise SchemaError(path, f"camera {cid}: H has {len(vals)} values, expected 9")
        if cid in out:
            raise SchemaError(path, f"duplicate camera_id {cid}")
        out[cid] = Homography(np.array(vals), cid)
    return out


# ---------------------------------------------------------------------------
# ground-truth / hypothesis tracks (CSV)

TRACK_HEADER = ["frame", "camera_id", "id", "x", "y", "w", "h", "gx", "gy", "conf"]


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    camera_id: int
    track_id: int
    bbox: tuple[float, float, float, float]
    ground: tuple[float, float]
    confidence: float = 1.0


def write_tracks(path, records: Iterable[TrackRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for r in records:
            w.writerow([r.frame, r.camera_id, r.track_id, *map(repr, r.bbox), *map(repr, r.ground),
                        repr(r.confidence)])


def read_tracks(path) -> list[TrackRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if header[:9] != TRACK_HEADER[:9]:
            raise FormatError(path, f"unexpected header {header}", 1)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) not in (9, 10):
                raise FormatError(path, f"expected 9 or 10 columns, got {len(row)}", lineno)
            try:
                frame, cam, tid = int(row[0]), int(row[1]), int(row[2])
                vals = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise FormatError(path, str(exc), lineno) from None
            conf = vals[6] if len(vals) == 7 else 1.0
            out.append(TrackRecord(frame, cam, tid, tuple(vals[:4]), tuple(vals[4:6]), conf))
    return out


# ---------------------------------------------------------------------------
# MOTChallenge output, one file per camera


@dataclass(frozen=True)
class MotRow:
    frame: int  # 0-based in memory
    track_id: int
    bbox: tuple[float, float, float, float]
    confidence: float


def mot_lines(rows: Iterable[MotRow]) -> str:
    buf = io.StringIO()
    for r in rows:
        x, y, w, h = r.bbox
        buf.write(f"{r.frame + 1},{r.track_id + 1},{x!r},{y!r},{w!r},{h!r},{r.confidence!r},-1,-1,-1\n")
    return buf.getvalue()


def write_mot(rows_by_camera: dict[int, list[MotRow]], out_dir, cameras: Iterable[int] = ()) -> dict[int, Path]:
    """Write ``cam<id>.txt`` per camera; cameras listed in ``cameras`` get a file even when empty."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for cam in sorted(set(rows_by_camera) | set(cameras)):
        p = out_dir / f"cam{cam}.txt"
        p.write_text(mot_lines(rows_by_camera.get(cam, [])), encoding="utf-8")
        paths[cam] = p
    return paths


def parse_mot(path) -> list[MotRow]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise FormatError(path, f"expected at least 7 columns, got {len(parts)}", lineno)
            try:
                frame, tid = int(parts[0]) - 1, int(parts[1]) - 1
                x, y, w, h, conf = (float(v) for v in parts[2:7])
            except ValueError as exc:
                raise FormatError(path, str(exc), lineno) from None
            if frame < 0 or tid < 0:
                raise FormatError(path, "frame and id are 1-based", lineno)
            out.append(MotRow(frame, tid, (x, y, w, h), conf))
    return out


# ---------------------------------------------------------------------------
# weights: magic line, JSON header line, little-endian float64 payload

WEIGHTS_MAGIC = b"RESTMOT-WEIGHTS\n"
WEIGHTS_VERSION = 1


class WeightsError(FormatError):
    pass


def _model_header(m: GraphModel) -> dict:
    return {
        "flavor": m.flavor,
        "perceptrons": [
            {"name": name, "layers": [{"weight": list(l.weight.shape), "activation": l.activation}
                                      for l in m[name].layers]}
            for name in PERCEPTRON_NAMES
        ],
    }


def write_weights(path, models: Sequence[GraphModel]) -> None:
    header = {"version": WEIGHTS_VERSION, "byte_order": "little", "dtype": "float64",
              "models": [_model_header(m) for m in models]}
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(json.dumps(header, separators=(",", ":")).encode("ascii") + b"\n")
        for m in models:
            for p in m.parameters():
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def read_weights(path) -> dict[str, GraphModel]:
    """Models keyed by flavor, rebuilt from the header's shapes."""
    data = Path(path).read_bytes()
    if not data.startswith(WEIGHTS_MAGIC):
        raise WeightsError(path, "not a weights file (bad magic)")
    nl = data.find(b"\n", len(WEIGHTS_MAGIC))
    if nl < 0:
        raise WeightsError(path, "truncated header")
    try:
        header = json.loads(data[len(WEIGHTS_MAGIC):nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise WeightsError(path, "unreadable header") from None
    if header.get("version") != WEIGHTS_VERSION:
        raise WeightsError(path, f"unsupported weights version {header.get('version')!r}")
    offset = nl + 1
    models = {}
    for mh in header["models"]:
        perceptrons = {}
        for ph in mh["perceptrons"]:
            layers = []
            for lh in ph["layers"]:
                out_dim, in_dim = lh["weight"]
                arrays = []
                for count, shape in ((out_dim * in_dim, (out_dim, in_dim)), (out_dim, (out_dim,))):
                    nbytes = 8 * count
                    if offset + nbytes > len(data):
                        raise WeightsError(path, f"truncated payload in {mh['flavor']}/{ph['name']}")
                    arrays.append(np.frombuffer(data, "<f8", count, offset).astype(np.float64).reshape(shape))
                    offset += nbytes
                layers.append(DenseLayer(arrays[0], arrays[1], lh["activation"]))
            perceptrons[ph["name"]] = Perceptron(ph["name"], layers)
        models[mh["flavor"]] = GraphModel(mh["flavor"], perceptrons)
    if offset != len(data):
        raise WeightsError(path, f"{len(data) - offset} trailing bytes after payload")
    return models


def check_model_shapes(m: GraphModel, flavor: str) -> None:
    """Raise :class:`ShapeError` naming the first perceptron whose widths differ from ``flavor``'s."""
    for name in PERCEPTRON_NAMES:
        widths = (m[name].in_dim,) + tuple(l.out_dim for l in m[name].layers)
        if widths != LAYER_WIDTHS[flavor][name]:
            raise ShapeError(f"{name}: widths {widths} do not match the {flavor} model {LAYER_WIDTHS[flavor][name]}")


def load_weights_into(target: GraphModel, source: GraphModel) -> None:
    check_model_shapes(source, target.flavor)
    target.load_parameters(source.parameters())


# ---------------------------------------------------------------------------
# JSON documents and JSON-lines logs


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON ({exc.msg})", exc.lineno) from None


def append_jsonl(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(path, f"invalid JSON ({exc.msg})", lineno) from None
    return out
