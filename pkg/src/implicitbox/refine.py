"""Occupant aggregation: a 6x6x6 grid inside each fitted boundary pools
implicit-value-weighted point features into a fixed-length descriptor,
and a small three-branch head turns it into a confidence score, a box
delta, and a direction bit that extends yaw from [0, pi) to [0, 2*pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .geometry import EPS_DIM, OrientedBox3, from_box_frame
from .implicit import ImplicitAssignment, LocalSample

GRID_SIDE = 6
GRID_POINTS = GRID_SIDE ** 3
DEFAULT_AGGREGATION_RADIUS = 0.8
DEFAULT_HEAD_WIDTH = 64
BOX_DELTA_DIM = 7  # dx, dy, dz, dl, dw, dh, dyaw


@dataclass(frozen=True, eq=False)
class OccupantFeatures:
    """Grid points (216, 3), per-grid pooled features, and the flattened
    descriptor feeding the head."""

    grid_points: np.ndarray
    features: np.ndarray
    descriptor: np.ndarray


def occupant_grid(box: OrientedBox3) -> np.ndarray:
    """Cell centers of a regular 6x6x6 lattice in the box frame, mapped to
    world coordinates. All points are strictly inside the box."""
    steps = (np.arange(GRID_SIDE) + 0.5) / GRID_SIDE - 0.5
    gx, gy, gz = np.meshgrid(steps * box.dims[0], steps * box.dims[1],
                             steps * box.dims[2], indexing="ij")
    local = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return from_box_frame(local, box)


def aggregate(box: OrientedBox3, sample: LocalSample,
              assignment: ImplicitAssignment,
              radius: float = DEFAULT_AGGREGATION_RADIUS) -> OccupantFeatures:
    """Max-pool implicit-weighted features around each grid point.

    Each sampled point's feature is scaled by its implicit value before
    pooling, so outside points (value 0) contribute nothing. Grid points
    with no neighbors within ``radius`` yield zero vectors.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    grid = occupant_grid(box)
    pts = sample.points
    weighted = sample.features * assignment.values[:, None]
    width = weighted.shape[1]
    pooled = np.zeros((GRID_POINTS, width))
    if len(pts):
        for i, gp in enumerate(grid):
            delta = pts - gp
            near = np.einsum("ij,ij->i", delta, delta) < radius ** 2
            if near.any():
                pooled[i] = weighted[near].max(axis=0)
    return OccupantFeatures(grid, pooled, pooled.ravel())


@dataclass(eq=False)
class RefineHeadParams:
    """Shared two-layer trunk plus three branch heads (confidence, box
    delta, direction), tanh activations throughout the trunk."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    conf_w: np.ndarray
    conf_b: float
    box_w: np.ndarray
    box_b: np.ndarray
    dir_w: np.ndarray
    dir_b: float

    @property
    def width(self) -> int:
        return len(self.b1)

    @property
    def descriptor_dim(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def zeros(cls, descriptor_dim: int, width: int = DEFAULT_HEAD_WIDTH):
        return cls(
            w1=np.zeros((width, descriptor_dim)), b1=np.zeros(width),
            w2=np.zeros((width, width)), b2=np.zeros(width),
            conf_w=np.zeros(width), conf_b=0.0,
            box_w=np.zeros((BOX_DELTA_DIM, width)), box_b=np.zeros(BOX_DELTA_DIM),
            dir_w=np.zeros(width), dir_b=0.0,
        )

    @classmethod
    def random(cls, descriptor_dim: int, width: int = DEFAULT_HEAD_WIDTH,
               seed: int = 0, scale: float = 0.1):
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0, scale, (width, descriptor_dim)),
            b1=rng.normal(0, scale, width),
            w2=rng.normal(0, scale, (width, width)),
            b2=rng.normal(0, scale, width),
            conf_w=rng.normal(0, scale, width), conf_b=float(rng.normal(0, scale)),
            box_w=rng.normal(0, scale, (BOX_DELTA_DIM, width)),
            box_b=rng.normal(0, scale, BOX_DELTA_DIM),
            dir_w=rng.normal(0, scale, width), dir_b=float(rng.normal(0, scale)),
        )

    _FIELDS = ("w1", "b1", "w2", "b2", "conf_w", "conf_b", "box_w", "box_b",
               "dir_w", "dir_b")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, name))
                               for name in self._FIELDS])

    def from_vector(self, vec: np.ndarray) -> RefineHeadParams:
        out = {}
        offset = 0
        for name in self._FIELDS:
            ref = np.asarray(getattr(self, name))
            size = ref.size
            chunk = np.asarray(vec[offset:offset + size]).reshape(ref.shape)
            out[name] = float(chunk) if ref.shape == () else chunk.copy()
            offset += size
        if offset != len(vec):
            raise ShapeMismatchError(
                f"vector length {len(vec)} != parameter count {offset}")
        return RefineHeadParams(**out)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def head_forward(params: RefineHeadParams, descriptor: np.ndarray,
                 with_cache: bool = False):
    """Returns (confidence, box_delta, direction_probability)."""
    d = np.asarray(descriptor, dtype=np.float64).reshape(-1)
    if len(d) != params.descriptor_dim:
        raise ShapeMismatchError(
            f"descriptor length {len(d)} != head input {params.descriptor_dim}")
    z1 = params.w1 @ d + params.b1
    h1 = np.tanh(z1)
    z2 = params.w2 @ h1 + params.b2
    h2 = np.tanh(z2)
    conf_logit = float(params.conf_w @ h2 + params.conf_b)
    confidence = float(_sigmoid(conf_logit))
    box_delta = params.box_w @ h2 + params.box_b
    dir_logit = float(params.dir_w @ h2 + params.dir_b)
    dir_prob = float(_sigmoid(dir_logit))
    if with_cache:
        cache = (d, z1, h1, z2, h2, conf_logit, dir_logit)
        return (confidence, box_delta, dir_prob), cache
    return confidence, box_delta, dir_prob


def refine_head(descriptor: np.ndarray, params: RefineHeadParams):
    """Head outputs with the direction collapsed to a {0, 1} bit."""
    confidence, box_delta, dir_prob = head_forward(params, descriptor)
    return confidence, box_delta, int(dir_prob > 0.5)


def apply_direction(yaw: float, direction: int) -> float:
    """Extend a [0, pi) yaw to [0, 2*pi) using the direction bit."""
    return float(yaw) + (math.pi if direction else 0.0)


def refine_box(box: OrientedBox3, box_delta, direction: int = 0) -> OrientedBox3:
    """Apply an additive (dx, dy, dz, dl, dw, dh, dyaw) delta and the
    direction bit; dims are clamped positive."""
    delta = np.asarray(box_delta, dtype=np.float64).reshape(BOX_DELTA_DIM)
    center = box.center + delta[:3]
    dims = np.maximum(box.dims + delta[3:6], EPS_DIM)
    yaw = apply_direction(box.yaw + delta[6], direction)
    return OrientedBox3(center, dims, yaw)
