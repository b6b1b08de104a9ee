"""Deterministic synthetic scenes: ground-truth boxes plus LiDAR-like
surface point clouds with controllable sparsity, noise, and clutter.

A single sensor sits at the origin. A box face receives points only when
its outward normal points back toward the sensor (cheap stand-in for ray
casting), which produces the one-sided coverage typical of driving data.
Objects rest on the ground plane z = z_min and never overlap in BEV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import PlacementFailureError
from .geometry import (TWO_PI, OrientedBox3, PointCloud, iou_bev,
                       points_in_box, rotate_z)

# x_min, x_max, y_min, y_max, z_min, z_max — KITTI-style detection range.
DEFAULT_BOUNDS = (0.0, 70.4, -40.0, 40.0, -3.0, 1.0)

_PLACEMENT_TRIES_PER_OBJECT = 100
_MIN_DIM = 0.1
_MAX_DENSITY_BOOST = 100.0


@dataclass(frozen=True)
class SceneConfig:
    """Generation knobs. Identical configs produce byte-identical scenes."""

    bounds: tuple = DEFAULT_BOUNDS
    object_count: int = 6
    dims_mean: tuple = (3.9, 1.6, 1.56)
    dims_std: tuple = (0.25, 0.1, 0.08)
    points_per_object_at_10m: int = 200
    density_exponent: float = 1.0
    noise_sigma: float = 0.01
    clutter_fraction: float = 0.1
    yaw_range: tuple = (0.0, TWO_PI)
    label: str = "object"
    seed: int = 0

    def __post_init__(self):
        x0, x1, y0, y1, z0, z1 = self.bounds
        if not (x0 < x1 and y0 < y1 and z0 < z1):
            raise ValueError(f"empty bounds {self.bounds}")
        if self.object_count < 0:
            raise ValueError("object_count must be >= 0")
        if self.density_exponent < 0:
            raise ValueError("density_exponent must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.clutter_fraction < 1.0:
            raise ValueError("clutter_fraction must be in [0, 1)")
        if not 0.0 <= self.yaw_range[0] <= self.yaw_range[1] <= TWO_PI:
            raise ValueError("yaw_range must satisfy 0 <= lo <= hi <= 2*pi")


@dataclass(frozen=True)
class Scene:
    """Ground-truth boxes with labels, the point cloud, and the config."""

    boxes: tuple
    labels: tuple
    cloud: PointCloud
    config: SceneConfig


def _place_boxes(config: SceneConfig, rng: np.random.Generator) -> list[OrientedBox3]:
    x0, x1, y0, y1, z0, z1 = config.bounds
    boxes: list[OrientedBox3] = []
    for index in range(config.object_count):
        for _ in range(_PLACEMENT_TRIES_PER_OBJECT):
            dims = rng.normal(config.dims_mean, config.dims_std)
            dims = np.clip(dims, _MIN_DIM, None)
            dims[2] = min(dims[2], z1 - z0)
            yaw = rng.uniform(*config.yaw_range) % TWO_PI
            margin = math.hypot(dims[0], dims[1]) / 2.0
            if x0 + margin >= x1 - margin or y0 + margin >= y1 - margin:
                continue
            cx = rng.uniform(x0 + margin, x1 - margin)
            cy = rng.uniform(y0 + margin, y1 - margin)
            cz = z0 + dims[2] / 2.0
            box = OrientedBox3((cx, cy, cz), dims, yaw)
            if all(iou_bev(box, other) == 0.0 for other in boxes):
                boxes.append(box)
                break
        else:
            raise PlacementFailureError(
                f"could not place object {index} after "
                f"{_PLACEMENT_TRIES_PER_OBJECT} attempts")
    return boxes


# Outward face normals and in-plane axes, in the box frame. Each row is
# (normal_axis, sign); the remaining two axes span the face rectangle.
_FACES = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]

# Surface points sit this far inside their face so that box membership
# survives the float round trip through the box frame; stays well under
# the 1e-9 surface-distance contract for noiseless scenes.
_SURFACE_INSET = 1e-10


def _surface_points(box: OrientedBox3, count: int,
                    rng: np.random.Generator) -> np.ndarray:
    half = box.dims / 2.0
    normals_local = np.zeros((6, 3))
    centers_local = np.zeros((6, 3))
    areas = np.empty(6)
    for i, (axis, sign) in enumerate(_FACES):
        normals_local[i, axis] = sign
        centers_local[i, axis] = sign * half[axis]
        others = [a for a in range(3) if a != axis]
        areas[i] = box.dims[others[0]] * box.dims[others[1]]
    normals_world = rotate_z(normals_local, box.yaw)
    centers_world = rotate_z(centers_local, box.yaw) + box.center
    # Visible iff the outward normal opposes the ray from the sensor origin.
    visible = np.einsum("ij,ij->i", normals_world, centers_world) < 0.0
    if not visible.any():
        visible[:] = True
    probs = areas * visible
    probs = probs / probs.sum()
    per_face = rng.multinomial(count, probs)
    chunks = []
    for i, (axis, sign) in enumerate(_FACES):
        n = int(per_face[i])
        if n == 0:
            continue
        others = [a for a in range(3) if a != axis]
        local = np.empty((n, 3))
        local[:, axis] = sign * (half[axis] - _SURFACE_INSET)
        local[:, others[0]] = rng.uniform(-half[others[0]], half[others[0]], n)
        local[:, others[1]] = rng.uniform(-half[others[1]], half[others[1]], n)
        chunks.append(local)
    local = np.vstack(chunks) if chunks else np.zeros((0, 3))
    return rotate_z(local, box.yaw) + box.center


def generate_scene(config: SceneConfig) -> Scene:
    """Generate a scene: a pure function of the config (seed included).

    Per-object point counts scale as points_per_object_at_10m times
    (10 m / distance) ** density_exponent, floored at one point. With
    noise_sigma = 0 every object point lies exactly on a visible face.
    """
    rng = np.random.default_rng(config.seed)
    boxes = _place_boxes(config, rng)

    chunks = []
    for box in boxes:
        distance = max(float(np.linalg.norm(box.center)), 1e-6)
        boost = min((10.0 / distance) ** config.density_exponent,
                    _MAX_DENSITY_BOOST)
        count = max(1, round(config.points_per_object_at_10m * boost))
        chunks.append(_surface_points(box, count, rng))
    object_points = np.vstack(chunks) if chunks else np.zeros((0, 3))
    if config.noise_sigma > 0 and len(object_points):
        object_points = object_points + rng.normal(
            0.0, config.noise_sigma, object_points.shape)

    n_object = len(object_points)
    f = config.clutter_fraction
    n_clutter = round(n_object * f / (1.0 - f)) if n_object else 0
    x0, x1, y0, y1, z0, z1 = config.bounds
    clutter = rng.uniform((x0, y0, z0), (x1, y1, z1), size=(n_clutter, 3))

    points = np.vstack([object_points, clutter])
    points = np.clip(points, (x0, y0, z0), (x1, y1, z1))
    intensity = rng.uniform(0.0, 1.0, len(points))
    return Scene(
        boxes=tuple(boxes),
        labels=tuple(config.label for _ in boxes),
        cloud=PointCloud(points, intensity),
        config=config,
    )


def mask_inside_points(scene: Scene, box_index: int, fraction: float,
                       seed: int = 0) -> Scene:
    """Remove floor(fraction * n_inside) random points inside one box.

    Points outside the indexed box are untouched. Raises IndexError for a
    bad index and ValueError for a fraction outside [0, 1].
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if not 0 <= box_index < len(scene.boxes):
        raise IndexError(f"box index {box_index} out of range "
                         f"[0, {len(scene.boxes)})")
    box = scene.boxes[box_index]
    inside_idx = np.flatnonzero(points_in_box(scene.cloud.points, box))
    n_remove = int(fraction * len(inside_idx))
    if n_remove == 0:
        return scene
    rng = np.random.default_rng(seed)
    removed = rng.choice(inside_idx, size=n_remove, replace=False)
    keep = np.ones(len(scene.cloud), dtype=bool)
    keep[removed] = False
    cloud = PointCloud(scene.cloud.points[keep], scene.cloud.intensity[keep])
    return replace(scene, cloud=cloud)


def perturb_box_center(box: OrientedBox3, max_shift, seed: int = 0) -> OrientedBox3:
    """Shift each center coordinate by Uniform[-d, +d]; dims and yaw keep."""
    shift = np.asarray(max_shift, dtype=np.float64).reshape(3)
    if np.any(shift < 0):
        raise ValueError("max_shift components must be >= 0")
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-shift, shift) if shift.any() else np.zeros(3)
    return box.translated(delta)
