"""Candidate-center proposal: BEV seeds, center shifting, 3D centerness
scoring, and cube-based non-maximum suppression.

Seeds live on the ground plane (z = 0). A pluggable shifter moves each
seed toward an object center and a pluggable scorer rates the shifted
position; oracle versions of both are provided here, learned versions in
:mod:`implicitbox.train`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .geometry import OrientedBox3, rotate_z, to_box_frame
from .scenegen import Scene

# Candidate/seed feature width, zero-padded. Deterministic local statistics
# stand in for learned BEV features so the downstream stages stay testable.
FEATURE_DIM = 32
# Radius of the neighborhood feeding the local statistics.
FEATURE_RADIUS = 2.0
# Candidates scoring below this are dropped before suppression.
SCORE_FLOOR = 1e-4
# Edge length of the suppression cube around each candidate center.
CUBE_SIDE = 1.0

DEFAULT_TOP_K = 512
DEFAULT_CELL_SIZE = 0.8


@dataclass(frozen=True, eq=False)
class Candidate:
    """A shifted center with its feature vector and centerness score."""

    position: np.ndarray
    feature: np.ndarray
    centerness: float
    source_index: int

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.float64).reshape(3)
        feature = np.asarray(self.feature, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(position)) and np.all(np.isfinite(feature))):
            raise ValueError("candidate position and feature must be finite")
        if not 0.0 <= self.centerness <= 1.0:
            raise ValueError(f"centerness must be in [0, 1], got {self.centerness}")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "feature", feature)


@dataclass(frozen=True, eq=False)
class SeedGrid:
    """One seed per occupied BEV cell: positions (n, 3) with z = 0,
    features (n, FEATURE_DIM), and the cell edge length."""

    positions: np.ndarray
    features: np.ndarray
    cell_size: float

    def __len__(self) -> int:
        return len(self.positions)


def default_seed_features(cloud, cell_indices: np.ndarray,
                          cell_center: np.ndarray) -> np.ndarray:
    """Hand-crafted local statistics, zero-padded to FEATURE_DIM.

    Uses the points within FEATURE_RADIUS (BEV) of the cell center:
    counts, height stats, mean intensity, covariance eigenvalues, and the
    doubled-angle BEV orientation of the principal axis (doubling makes
    the encoding insensitive to the 180-degree ambiguity of an axis).
    """
    feature = np.zeros(FEATURE_DIM)
    pts = cloud.points
    d2 = (pts[:, 0] - cell_center[0]) ** 2 + (pts[:, 1] - cell_center[1]) ** 2
    near = d2 <= FEATURE_RADIUS ** 2
    local = pts[near]
    feature[0] = math.log1p(len(cell_indices))
    feature[1] = math.log1p(len(local))
    if len(local) == 0:
        return feature
    feature[2] = local[:, 2].mean()
    feature[3] = local[:, 2].min()
    feature[4] = local[:, 2].max()
    feature[5] = local[:, 2].std()
    feature[6] = cloud.intensity[near].mean()
    centroid = local.mean(axis=0)
    feature[7] = centroid[0] - cell_center[0]
    feature[8] = centroid[1] - cell_center[1]
    if len(local) >= 2:
        cov = np.cov(local, rowvar=False)
        eigvals = np.sort(np.linalg.eigvalsh(cov))[::-1]
        feature[9:12] = eigvals
        bev_cov = cov[:2, :2]
        vals, vecs = np.linalg.eigh(bev_cov)
        principal = vecs[:, np.argmax(vals)]
        # Canonical sign (x >= 0, ties toward +y): the axis is only defined
        # up to 180 degrees and box membership ignores the flip.
        if principal[0] < 0 or (principal[0] == 0 and principal[1] < 0):
            principal = -principal
        anisotropy = 1.0 - (min(vals.max(), vals.min()) / vals.max()
                            if vals.max() > 0 else 1.0)
        feature[12] = principal[0]
        feature[13] = principal[1]
        feature[14] = anisotropy * principal[0]
        feature[15] = anisotropy * principal[1]
        feature[16] = math.sqrt(max(vals.max(), 0.0))
        feature[17] = math.sqrt(max(vals.min(), 0.0))
    return feature


def make_seed_grid(scene: Scene, cell_size: float = DEFAULT_CELL_SIZE,
                   feature_provider=None) -> SeedGrid:
    """One seed at the center of every BEV cell holding at least one point."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    provider = feature_provider or default_seed_features
    pts = scene.cloud.points
    if len(pts) == 0:
        return SeedGrid(np.zeros((0, 3)), np.zeros((0, FEATURE_DIM)), cell_size)
    x0, _, y0, _, _, _ = scene.config.bounds
    ix = np.floor((pts[:, 0] - x0) / cell_size).astype(np.int64)
    iy = np.floor((pts[:, 1] - y0) / cell_size).astype(np.int64)
    cells: dict[tuple[int, int], list[int]] = {}
    for index, key in enumerate(zip(ix.tolist(), iy.tolist())):
        cells.setdefault(key, []).append(index)
    positions = np.zeros((len(cells), 3))
    features = np.zeros((len(cells), FEATURE_DIM))
    for row, (key, indices) in enumerate(sorted(cells.items())):
        center = np.array([x0 + (key[0] + 0.5) * cell_size,
                           y0 + (key[1] + 0.5) * cell_size, 0.0])
        positions[row] = center
        features[row] = provider(scene.cloud, np.asarray(indices), center)
    return SeedGrid(positions, features, cell_size)


def centerness_many(points, box: OrientedBox3) -> np.ndarray:
    """3D centerness: cube root of the per-axis min/max face-distance
    ratios; exactly 0 for points outside the closed box."""
    local = np.atleast_2d(to_box_frame(points, box))
    half = box.dims / 2.0
    near = half - np.abs(local)   # distance to the closer face per axis
    far = half + np.abs(local)    # distance to the farther face per axis
    ratios = np.clip(near, 0.0, None) / far
    values = np.cbrt(ratios.prod(axis=-1))
    values[np.any(near < 0.0, axis=-1)] = 0.0
    return values


def centerness(p, box: OrientedBox3) -> float:
    return float(centerness_many(np.asarray(p, dtype=np.float64).reshape(1, 3),
                                 box)[0])


def bev_footprint_mask(points, box: OrientedBox3) -> np.ndarray:
    """True where a point's (x, y) falls inside the box footprint."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    flat = np.column_stack([pts[:, 0], pts[:, 1], np.full(len(pts), box.center[2])])
    local = to_box_frame(flat, box)
    half = box.dims / 2.0
    return (np.abs(local[:, 0]) <= half[0]) & (np.abs(local[:, 1]) <= half[1])


class OracleShifter:
    """Shifts each seed inside a box footprint onto that box's center.

    Seeds outside every footprint keep their position. Feature offsets
    are zero (there is no ground truth for them).
    """

    def __init__(self, boxes):
        self.boxes = tuple(boxes)

    def __call__(self, grid: SeedGrid):
        offsets = np.zeros_like(grid.positions)
        claimed = np.zeros(len(grid), dtype=bool)
        for box in self.boxes:
            mask = bev_footprint_mask(grid.positions, box) & ~claimed
            offsets[mask] = box.center - grid.positions[mask]
            claimed |= mask
        return offsets, np.zeros_like(grid.features)


class OracleScorer:
    """Scores a position with the 3D centerness of its enclosing box."""

    def __init__(self, boxes):
        self.boxes = tuple(boxes)

    def __call__(self, positions: np.ndarray, features: np.ndarray) -> np.ndarray:
        scores = np.zeros(len(positions))
        for box in self.boxes:
            values = centerness_many(positions, box)
            scores = np.maximum(scores, values)
        return scores


def shift_candidates(grid: SeedGrid, shifter, scorer) -> list[Candidate]:
    """Apply the shifter to every seed and score the shifted centers."""
    if len(grid) == 0:
        raise EmptyInputError("seed grid is empty")
    pos_offsets, feat_offsets = shifter(grid)
    positions = grid.positions + pos_offsets
    features = grid.features + feat_offsets
    scores = np.clip(scorer(positions, features), 0.0, 1.0)
    return [Candidate(positions[i], features[i], float(scores[i]), i)
            for i in range(len(grid))]


def cube_nms(cands: list[Candidate], k: int = DEFAULT_TOP_K,
             min_separation: float = CUBE_SIDE,
             score_floor: float = SCORE_FLOOR) -> list[Candidate]:
    """Greedy suppression treating each center as a min_separation cube.

    Two axis-aligned unit cubes have positive 3D IoU exactly when centers
    are closer than the edge length on every axis, so the suppression
    test is a per-axis distance check. Ties in centerness break by
    source_index ascending. Returns at most k survivors, best first.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    alive = [c for c in cands if c.centerness >= score_floor]
    alive.sort(key=lambda c: (-c.centerness, c.source_index))
    kept: list[Candidate] = []
    for cand in alive:
        if len(kept) >= k:
            break
        suppressed = any(
            np.all(np.abs(cand.position - other.position) < min_separation)
            for other in kept)
        if not suppressed:
            kept.append(cand)
    return kept
