"""Synthetic multi-camera scenes: ground-plane trajectories seen by calibrated pinhole cameras.

Each camera looks at the centre of a square area from outside one of its
corners. A detection is emitted when the whole box lies inside the image and
the box is not occluded or randomly dropped. Appearance vectors stand in for a
ReID embedding: a unit anchor per identity plus Gaussian noise and a
per-camera bias.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import DetectionRecord, TrackRecord
from .geometry import CalibrationError, Homography
from .graph import APPEARANCE_DIM

VISIBLE, OUT_OF_VIEW, OCCLUDED, DROPPED = 0, 1, 2, 3


@dataclass
class SceneSpec:
    cameras: int = 4
    identities: int = 8
    frames: int = 300
    area: float = 12.0  # side of the square walking area, metres
    image_width: int = 1280
    image_height: int = 720
    focal: float = 800.0
    camera_height: float = 6.0
    camera_offset: float = 4.0  # distance of each camera outside its corner, along both axes
    motion: str = "waypoint"  # or "random-walk"
    speed_min: float = 0.05  # metres per frame
    speed_max: float = 0.15
    min_separation: float = 0.5
    occlusion_mode: str = "geometric"  # or "random"
    occlusion_drop: float = 0.15
    occlusion_overlap: float = 0.5
    feature_noise_sigma: float = 0.15  # per dimension; same/different-identity pair AUC about 0.9
    feature_camera_bias_sigma: float = 0.02  # per dimension
    anchor_cos_cap: float = 0.5
    bbox_base_size: float = 180.0  # box height in pixels at bbox_ref_distance
    bbox_ref_distance: float = 10.0
    bbox_aspect: float = 0.4
    bbox_noise_px: float = 1.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cameras < 1 or self.identities < 0 or self.frames < 0:
            raise ValueError("cameras must be >= 1; identities and frames >= 0")
        if self.motion not in ("waypoint", "random-walk"):
            raise ValueError(f"unknown motion model {self.motion!r}")
        if self.occlusion_mode not in ("geometric", "random"):
            raise ValueError(f"unknown occlusion mode {self.occlusion_mode!r}")
        if not 0.0 <= self.occlusion_drop < 1.0:
            raise ValueError("occlusion_drop must lie in [0, 1)")
        if not 0.0 < self.speed_min <= self.speed_max:
            raise ValueError("need 0 < speed_min <= speed_max")
        if not -1.0 < self.anchor_cos_cap <= 1.0:
            raise ValueError("anchor_cos_cap must lie in (-1, 1]")
        if min(self.feature_noise_sigma, self.feature_camera_bias_sigma, self.bbox_noise_px) < 0:
            raise ValueError("noise levels must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scene fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class Camera:
    camera_id: int
    K: np.ndarray
    R: np.ndarray  # world -> camera rotation
    t: np.ndarray
    width: int
    height: int

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def homography(self) -> Homography:
        h = self.K @ np.column_stack([self.R[:, 0], self.R[:, 1], self.t])
        return Homography(h / h[2, 2], self.camera_id)


def look_at(camera_id: int, eye, target, focal: float, width: int, height: int) -> Camera:
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    if np.linalg.norm(right) < 1e-9:
        raise CalibrationError(f"camera {camera_id} looks straight down; homography undefined by look_at")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    return Camera(camera_id, K, R, -R @ eye, width, height)


def make_cameras(spec: SceneSpec) -> list[Camera]:
    a, o = spec.area, spec.camera_offset
    corners = [(-o, -o), (a + o, -o), (a + o, a + o), (-o, a + o)]
    centre = (a / 2.0, a / 2.0, 0.0)
    cams = []
    for c in range(spec.cameras):
        # beyond four cameras, continue around the perimeter at edge midpoints
        if c < 4:
            x, y = corners[c]
        else:
            k = (c - 4) % 4
            x, y = [(a / 2, -o), (a + o, a / 2), (a / 2, a + o), (-o, a / 2)][k]
        cams.append(look_at(c, (x, y, spec.camera_height), centre, spec.focal, spec.image_width, spec.image_height))
    return cams


def sample_anchors(n: int, dim: int, cos_cap: float, rng: np.random.Generator, max_tries: int = 10000) -> np.ndarray:
    """Unit vectors, uniform on the sphere, with every pairwise cosine <= ``cos_cap``."""
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {n} anchors under cosine cap {cos_cap}")
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= cos_cap for u in out):
            out.append(v)
    return np.array(out).reshape(n, dim)


def simulate_trajectories(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Ground positions, shape (frames, identities, 2)."""
    n, lo, hi = spec.identities, 0.5, spec.area - 0.5
    pos = rng.uniform(lo, hi, size=(n, 2))
    speed = rng.uniform(spec.speed_min, spec.speed_max, size=n)
    goal = rng.uniform(lo, hi, size=(n, 2))
    heading = rng.uniform(0, 2 * np.pi, size=n)
    out = np.zeros((spec.frames, n, 2))
    for f in range(spec.frames):
        out[f] = pos
        if spec.motion == "waypoint":
            delta = goal - pos
            dist = np.linalg.norm(delta, axis=1)
            arrived = dist <= speed
            step = np.where(arrived[:, None], delta, delta / np.maximum(dist, 1e-12)[:, None] * speed[:, None])
            pos = pos + step
            for i in np.flatnonzero(arrived):
                goal[i] = rng.uniform(lo, hi, size=2)
                speed[i] = rng.uniform(spec.speed_min, spec.speed_max)
        else:
            heading = heading + rng.normal(0.0, 0.3, size=n)
            pos = pos + speed[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
            # reflect at the borders
            for k in range(2):
                low, high = pos[:, k] < lo, pos[:, k] > hi
                pos[low, k] = 2 * lo - pos[low, k]
                pos[high, k] = 2 * hi - pos[high, k]
                flip = low | high
                if k == 0:
                    heading[flip] = np.pi - heading[flip]
                else:
                    heading[flip] = -heading[flip]
        pos = _separate(pos, spec.min_separation)
        pos = np.clip(pos, lo, hi)
    return out


def _separate(pos: np.ndarray, min_sep: float) -> np.ndarray:
    pos = pos.copy()
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            d = pos[j] - pos[i]
            dist = float(np.hypot(*d))
            if dist < min_sep:
                u = d / dist if dist > 1e-9 else np.array([1.0, 0.0])
                push = 0.5 * (min_sep - dist) * u
                pos[i] -= push
                pos[j] += push
    return pos


def _overlap_fraction(a, b) -> float:
    """Intersection area over the area of ``b``."""
    x1, y1 = max(a[0], b[0]), max(a[1], b[1])
    x2, y2 = min(a[0] + a[2], b[0] + b[2]), min(a[1] + a[3], b[1] + b[3])
    inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
    return inter / (b[2] * b[3])


@dataclass
class Scene:
    spec: SceneSpec
    cameras: list[Camera]
    records: list[DetectionRecord]  # ordered by (frame, camera, identity)
    positions: np.ndarray  # (frames, identities, 2) true ground positions
    status: np.ndarray  # (frames, cameras, identities): VISIBLE / OUT_OF_VIEW / OCCLUDED / DROPPED
    anchors: np.ndarray = field(repr=False)

    @property
    def homographies(self) -> list[Homography]:
        return [c.homography for c in self.cameras]


def generate(spec: SceneSpec) -> Scene:
    root = np.random.SeedSequence(spec.seed)
    r_motion, r_app, r_box, r_drop = (np.random.default_rng(s) for s in root.spawn(4))
    cams = make_cameras(spec)
    for c in cams:
        c.homography  # validates conditioning
    positions = simulate_trajectories(spec, r_motion)
    anchors = sample_anchors(spec.identities, APPEARANCE_DIM, spec.anchor_cos_cap, r_app)
    bias = r_app.normal(0.0, spec.feature_camera_bias_sigma, size=(spec.cameras, APPEARANCE_DIM))
    status = np.full((spec.frames, spec.cameras, spec.identities), OUT_OF_VIEW, dtype=np.int8)
    records = []
    W, H = spec.image_width, spec.image_height
    for f in range(spec.frames):
        ground = np.concatenate([positions[f], np.zeros((spec.identities, 1))], axis=1)
        for cam in cams:
            # draw every random number for every identity so outputs do not depend on visibility
            noise = r_box.normal(0.0, spec.bbox_noise_px, size=(spec.identities, 3))
            feat_noise = r_app.normal(0.0, spec.feature_noise_sigma, size=(spec.identities, APPEARANCE_DIM))
            drop_u = r_drop.uniform(size=spec.identities)
            pc = ground @ cam.R.T + cam.t
            boxes, dists = {}, {}
            for i in range(spec.identities):
                if pc[i, 2] <= 0.1:
                    continue
                u = cam.K @ pc[i]
                fx, fy = u[0] / u[2] + noise[i, 0], u[1] / u[2] + noise[i, 1]
                dist = float(np.linalg.norm(pc[i]))
                h = spec.bbox_base_size * spec.bbox_ref_distance / dist + noise[i, 2]
                w = spec.bbox_aspect * h
                box = (fx - w / 2.0, fy - h, w, h)
                if h > 1.0 and box[0] >= 0 and box[1] >= 0 and box[0] + w <= W and box[1] + h <= H:
                    boxes[i] = box
                    dists[i] = dist
            order = sorted(boxes, key=lambda i: (dists[i], i))
            for rank, i in enumerate(order):
                st = VISIBLE
                if spec.occlusion_mode == "geometric":
                    if any(_overlap_fraction(boxes[j], boxes[i]) > spec.occlusion_overlap for j in order[:rank]):
                        st = OCCLUDED
                if st == VISIBLE and drop_u[i] < spec.occlusion_drop:
                    st = DROPPED
                status[f, cam.camera_id, i] = st
            for i in sorted(boxes):
                if status[f, cam.camera_id, i] == VISIBLE:
                    feat = anchors[i] + feat_noise[i] + bias[cam.camera_id]
                    records.append(DetectionRecord(f, cam.camera_id, boxes[i], feat, gt_id=i, confidence=1.0))
    return Scene(spec, cams, records, positions, status, anchors)


def ground_truth_export(scene: Scene) -> list[TrackRecord]:
    """One record per emitted detection, carrying the true id and true ground position."""
    out = []
    for r in scene.records:
        gx, gy = scene.positions[r.frame, r.gt_id]
        out.append(TrackRecord(r.frame, r.camera_id, int(r.gt_id), r.bbox, (float(gx), float(gy)), 1.0))
    return out


def occlusion_counts(scene: Scene) -> np.ndarray:
    """Per identity, frames where it is hidden in at least one view it could be seen from and visible in another."""
    st = scene.status
    hidden = ((st == OCCLUDED) | (st == DROPPED)).any(axis=1)
    seen = (st == VISIBLE).any(axis=1)
    return (hidden & seen).sum(axis=0)
