"""Ground-plane geometry: homography projection, speeds and pairwise distance features."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BBox = Sequence[float]  # (x, y, w, h) in pixels


class CalibrationError(ValueError):
    """Raised for a singular or malformed homography."""


class ProjectionError(ValueError):
    """Raised when a point maps to infinity on the ground plane."""


class OrderingError(ValueError):
    """Raised when speed is requested with non-increasing timestamps."""


_COND_LIMIT = 1e12
_W_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 map from homogeneous ground-plane points to homogeneous image points."""

    h: np.ndarray
    camera_id: int = 0
    _inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.float64)
        if h.shape == (9,):
            h = h.reshape(3, 3)
        if h.shape != (3, 3) or not np.all(np.isfinite(h)):
            raise CalibrationError(f"camera {self.camera_id}: homography must be a finite 3x3 matrix")
        if np.linalg.cond(h) > _COND_LIMIT:
            raise CalibrationError(f"camera {self.camera_id}: homography is singular")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "_inv", np.linalg.inv(h))

    @property
    def inverse(self) -> np.ndarray:
        return self._inv

    def to_image(self, ground: np.ndarray) -> np.ndarray:
        """Forward map of ground points (..., 2) into pixel coordinates (..., 2)."""
        return _apply(self.h, ground)

    def to_ground(self, image: np.ndarray) -> np.ndarray:
        """Inverse map of pixel points (..., 2) onto the ground plane (..., 2)."""
        return _apply(self._inv, image)


def _apply(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    homog = pts @ m[:, :2].T + m[:, 2]
    w = homog[..., 2:3]
    scale = np.maximum(np.abs(homog[..., :2]).max(axis=-1, keepdims=True), 1.0)
    if np.any(np.abs(w) <= _W_EPS * scale):
        raise ProjectionError("point projects to infinity (third homogeneous coordinate ~ 0)")
    return homog[..., :2] / w


def foot_point(bbox: BBox) -> np.ndarray:
    x, y, w, h = bbox
    return np.array([x + w / 2.0, y + h], dtype=np.float64)


def project_foot_point(bbox: BBox, H: Homography) -> np.ndarray:
    """Ground position of the bottom-centre of ``bbox``."""
    if bbox[2] <= 0 or bbox[3] <= 0:
        raise ValueError(f"bbox width/height must be positive, got {tuple(bbox)}")
    return H.to_ground(foot_point(bbox))


def project_foot_points(bboxes: np.ndarray, H: Homography) -> np.ndarray:
    bboxes = np.asarray(bboxes, dtype=np.float64).reshape(-1, 4)
    feet = np.stack([bboxes[:, 0] + bboxes[:, 2] / 2.0, bboxes[:, 1] + bboxes[:, 3]], axis=1)
    return H.to_ground(feet)


def speed(p_i: np.ndarray, t_i: float, p_j: np.ndarray, t_j: float) -> np.ndarray:
    """Displacement per frame from reference node j to node i (requires t_i > t_j)."""
    if not t_i > t_j:
        raise OrderingError(f"speed needs t_i > t_j, got t_i={t_i}, t_j={t_j}")
    return (np.asarray(p_i, dtype=np.float64) - np.asarray(p_j, dtype=np.float64)) / (t_i - t_j)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Return ``(1 - cos(a, b), degenerate)``; a zero-norm input gives ``(1.0, True)``."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0, True
    return 1.0 - float(np.dot(a, b)) / (na * nb), False


def pair_norms(delta: np.ndarray) -> np.ndarray:
    """[L1, L2] of each row of ``delta``."""
    delta = np.atleast_2d(delta)
    return np.stack([np.abs(delta).sum(axis=1), np.sqrt((delta * delta).sum(axis=1))], axis=1)


def appearance_distances(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Rows of [L1(da - db), 1 - cos(da, db)] for row-aligned appearance matrices."""
    da = np.atleast_2d(da)
    db = np.atleast_2d(db)
    l1 = np.abs(da - db).sum(axis=1)
    na = np.linalg.norm(da, axis=1)
    nb = np.linalg.norm(db, axis=1)
    denom = na * nb
    ok = denom > 0
    cos = np.zeros_like(l1)
    cos[ok] = (da[ok] * db[ok]).sum(axis=1) / denom[ok]
    return np.stack([l1, np.where(ok, 1.0 - cos, 1.0)], axis=1)


def edge_distances(node_i, node_j) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Distance triple (appearance, position, speed) used as raw edge features.

    The speed term is ``None`` unless both nodes carry a speed.
    """
    if node_i.appearance.shape != node_j.appearance.shape:
        raise ValueError("appearance vectors differ in dimension")
    dd = appearance_distances(node_i.appearance, node_j.appearance)[0]
    dp = pair_norms(node_i.position - node_j.position)[0]
    ds = None
    if node_i.speed is not None and node_j.speed is not None:
        ds = pair_norms(node_i.speed - node_j.speed)[0]
    return dd, dp, ds
