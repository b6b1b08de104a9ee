"""Core 3D primitives: oriented boxes, frame transforms, membership tests,
fixed-yaw minimum bounding boxes, and rotated IoU with a Monte-Carlo oracle.

Conventions (fixed globally):
  * Positive yaw turns counter-clockwise about +z, viewed from above.
  * ``to_box_frame`` translates by -center, then rotates by -yaw.
  * Boxes are closed: points on a face count as inside.
  * All boxes share the gravity-aligned z axis; only BEV rotation differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyInputError, OutsidePointError

TWO_PI = 2.0 * math.pi

# Smallest extent kept when a point set is degenerate along an axis.
EPS_DIM = 1e-3
# BEV intersection areas below this count as empty.
EPS_AREA = 1e-12


def _as_xyz(p) -> np.ndarray:
    pts = np.asarray(p, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ValueError(f"expected 3 coordinates per point, got shape {pts.shape}")
    return pts


def rotate_z(points, yaw: float) -> np.ndarray:
    """Rotate points counter-clockwise by ``yaw`` about +z (origin fixed)."""
    pts = _as_xyz(points)
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.empty_like(pts)
    out[..., 0] = c * pts[..., 0] - s * pts[..., 1]
    out[..., 1] = s * pts[..., 0] + c * pts[..., 1]
    out[..., 2] = pts[..., 2]
    return out


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    """Oriented 3D box: center (m), dims (l, w, h) in meters, yaw in radians.

    l runs along the box x axis at yaw 0, w along y, h along z. Yaw is
    normalized into [0, 2*pi). Field arrays are read-only after construction.
    """

    center: np.ndarray
    dims: np.ndarray
    yaw: float

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(3)
        dims = np.array(self.dims, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(dims))):
            raise ValueError("box center and dims must be finite")
        if np.any(dims <= 0.0):
            raise ValueError(f"box dims must be positive, got {dims}")
        yaw = float(self.yaw)
        if not math.isfinite(yaw):
            raise ValueError("box yaw must be finite")
        center.setflags(write=False)
        dims.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", yaw % TWO_PI)

    @property
    def volume(self) -> float:
        return float(self.dims[0] * self.dims[1] * self.dims[2])

    def translated(self, offset) -> OrientedBox3:
        return OrientedBox3(self.center + np.asarray(offset, dtype=np.float64),
                            self.dims, self.yaw)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Point positions (n, 3) with per-point intensity (n,)."""

    points: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        intensity = np.array(self.intensity, dtype=np.float64).reshape(-1)
        if len(points) != len(intensity):
            raise ValueError(
                f"intensity length {len(intensity)} != point count {len(points)}")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(intensity))):
            raise ValueError("point cloud values must be finite")
        points.setflags(write=False)
        intensity.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "intensity", intensity)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0))


def to_box_frame(p, box: OrientedBox3) -> np.ndarray:
    """World point(s) -> box frame: translate by -center, rotate by -yaw."""
    return rotate_z(_as_xyz(p) - box.center, -box.yaw)


def from_box_frame(p, box: OrientedBox3) -> np.ndarray:
    """Box-frame point(s) -> world frame. Inverse of :func:`to_box_frame`."""
    return rotate_z(p, box.yaw) + box.center


def points_in_box(points, box: OrientedBox3) -> np.ndarray:
    """Boolean mask of points inside the (closed) box."""
    local = to_box_frame(points, box)
    half = box.dims / 2.0
    return np.all(np.abs(local) <= half, axis=-1)


def point_in_box(p, box: OrientedBox3) -> bool:
    return bool(points_in_box(_as_xyz(p).reshape(3), box))


def box_corners(box: OrientedBox3) -> np.ndarray:
    """The 8 corners, bottom face first, each face counter-clockwise.

    Signs of (x, y) in box frame follow the order (+,+), (-,+), (-,-), (+,-);
    corners 0-3 are at -h/2, corners 4-7 repeat the pattern at +h/2.
    """
    hx, hy, hz = box.dims / 2.0
    signs = np.array([(1, 1), (-1, 1), (-1, -1), (1, -1)], dtype=np.float64)
    local = np.empty((8, 3))
    local[:4, :2] = signs * (hx, hy)
    local[:4, 2] = -hz
    local[4:, :2] = signs * (hx, hy)
    local[4:, 2] = hz
    return from_box_frame(local, box)


def bev_corners(box: OrientedBox3) -> np.ndarray:
    """BEV footprint as a counter-clockwise (4, 2) polygon."""
    return box_corners(box)[:4, :2]


def face_margins(points, box: OrientedBox3) -> np.ndarray:
    """Distance from each point to its nearest face, in the box frame.

    Negative values mean the point is outside along that axis.
    """
    local = to_box_frame(points, box)
    half = box.dims / 2.0
    return np.min(half - np.abs(local), axis=-1)


def nearest_face_distance(p, box: OrientedBox3) -> float:
    """Distance from an inside point to the nearest of the 6 faces.

    Raises:
        OutsidePointError: if the point is not inside the closed box.
    """
    margin = float(face_margins(_as_xyz(p).reshape(3), box))
    if margin < 0.0:
        raise OutsidePointError(f"point lies {-margin:.3g} m outside the box")
    return margin


def min_box_at_yaw(points, yaw: float) -> OrientedBox3:
    """Smallest box with the given yaw containing all points.

    Extents are padded by a few float ulps so containment survives the
    round trip through ``to_box_frame``; degenerate extents are clamped
    to ``EPS_DIM``.
    """
    pts = _as_xyz(points).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInputError("min_box_at_yaw needs at least one point")
    local = rotate_z(pts, -yaw)
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    pad = 16.0 * np.finfo(np.float64).eps * np.maximum(
        1.0, np.maximum(np.abs(lo), np.abs(hi)))
    dims = np.maximum(hi - lo + 2.0 * pad, EPS_DIM)
    center = rotate_z((lo + hi) / 2.0, yaw)
    return OrientedBox3(center, dims, yaw)


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of one convex CCW polygon by another."""
    output = [tuple(v) for v in subject]
    n = len(clip)
    for i in range(n):
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        if not output:
            return np.zeros((0, 2))
        polygon = output
        output = []
        prev = polygon[-1]
        prev_in = ex * (prev[1] - ay) - ey * (prev[0] - ax) >= 0.0
        for cur in polygon:
            cur_in = ex * (cur[1] - ay) - ey * (cur[0] - ax) >= 0.0
            if cur_in != prev_in:
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                denom = dx * ey - dy * ex
                if denom != 0.0:
                    t = ((ax - prev[0]) * ey - (ay - prev[1]) * ex) / denom
                    output.append((prev[0] + t * dx, prev[1] + t * dy))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.asarray(output, dtype=np.float64).reshape(-1, 2)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def bev_intersection_area(a: OrientedBox3, b: OrientedBox3) -> float:
    """Area of the convex intersection of the two BEV footprints."""
    area = _polygon_area(_clip_convex(bev_corners(a), bev_corners(b)))
    return area if area >= EPS_AREA else 0.0


def iou_bev(a: OrientedBox3, b: OrientedBox3) -> float:
    """Rotated-rectangle IoU of the BEV footprints."""
    inter = bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    area_a = float(a.dims[0] * a.dims[1])
    area_b = float(b.dims[0] * b.dims[1])
    return min(inter / (area_a + area_b - inter), 1.0)


def _z_overlap(a: OrientedBox3, b: OrientedBox3) -> float:
    lo = max(a.center[2] - a.dims[2] / 2.0, b.center[2] - b.dims[2] / 2.0)
    hi = min(a.center[2] + a.dims[2] / 2.0, b.center[2] + b.dims[2] / 2.0)
    return max(0.0, hi - lo)


def iou_3d(a: OrientedBox3, b: OrientedBox3) -> float:
    """3D IoU: BEV polygon intersection times z-extent overlap, over union."""
    dz = _z_overlap(a, b)
    if dz == 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    if inter == 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return min(inter / union, 1.0)


class MonteCarloIoU(NamedTuple):
    value: float
    stderr: float


def iou_oracle(a: OrientedBox3, b: OrientedBox3, samples: int = 100_000,
               seed: int = 0) -> MonteCarloIoU:
    """Monte-Carlo IoU estimate, independent of the polygon-clipping path.

    Samples uniformly over the axis-aligned bounding region of both boxes
    and counts points inside the intersection and the union. The standard
    error is the binomial error of the intersection fraction conditioned
    on union hits, floored at 1/n_union so that zero-variance outcomes
    (IoU exactly 0 or 1) keep a usable 3-sigma band (rule of three).
    """
    corners = np.vstack([box_corners(a), box_corners(b)])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(int(samples), 3))
    in_a = points_in_box(pts, a)
    in_b = points_in_box(pts, b)
    n_union = int(np.count_nonzero(in_a | in_b))
    if n_union == 0:
        return MonteCarloIoU(0.0, 1.0)
    n_inter = int(np.count_nonzero(in_a & in_b))
    value = n_inter / n_union
    stderr = max(math.sqrt(value * (1.0 - value) / n_union), 1.0 / n_union)
    return MonteCarloIoU(value, stderr)
