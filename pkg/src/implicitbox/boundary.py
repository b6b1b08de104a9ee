"""Oriented boundary fitting from implicitly classified inside points.

Two strategies: *sampling* fits a minimum box directly over the inside
points; *centrosymmetry* first reflects every inside point through the
candidate center, pinning the fitted center onto the candidate. Both
enumerate a fixed set of yaw angles in [0, pi/2), score each fixed-yaw
minimum box by the accumulated point-to-surface distance, keep the best,
and finally correct the orientation so the longer BEV side is l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, NoInsidePointsError, OutsidePointError
from .geometry import EPS_DIM, OrientedBox3, face_margins, min_box_at_yaw, rotate_z
from .implicit import ImplicitAssignment, LocalSample

DEFAULT_ANGLE_COUNT = 7

STRATEGY_SAMPLING = "sampling"
STRATEGY_CENTROSYMMETRY = "centrosymmetry"
STRATEGIES = (STRATEGY_SAMPLING, STRATEGY_CENTROSYMMETRY)


@dataclass(frozen=True)
class BoundaryConfig:
    """Fitting knobs.

    ``threshold`` of None defers to the assignment's own threshold.
    ``use_virtual`` includes virtual points in the fit (the stronger
    variant); ``score_raw_only`` restricts the angle-selection score to
    raw inside points while still fitting over the full set.
    """

    angle_count: int = DEFAULT_ANGLE_COUNT
    threshold: float | None = None
    use_virtual: bool = True
    score_raw_only: bool = False

    def __post_init__(self):
        if self.angle_count < 1:
            raise ValueError("angle_count must be >= 1")
        if self.threshold is not None and not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted boundary, the winning angle, and its accumulated score."""

    box: OrientedBox3
    angle_index: int
    score: float
    strategy: str
    inside_count: int


def inside_points(sample: LocalSample, assignment: ImplicitAssignment,
                  threshold: float | None = None) -> np.ndarray:
    """Raw and virtual points whose implicit value exceeds the threshold."""
    t = assignment.threshold if threshold is None else threshold
    if not 0.0 < t < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return sample.points[assignment.values > t]


def angle_set(count: int) -> np.ndarray:
    """Left-aligned partition of [0, pi/2): j * (pi/2) / count."""
    if count < 1:
        raise ValueError("angle count must be >= 1")
    return np.arange(count) * (math.pi / 2.0) / count


def fit_score(points, box: OrientedBox3) -> float:
    """Sum of point-to-nearest-face distances; lower means tighter.

    Raises OutsidePointError if any point lies outside the box.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    margins = face_margins(pts, box)
    if np.any(margins < 0.0):
        raise OutsidePointError("fit_score requires all points inside the box")
    return float(margins.sum())


def fit_sampling(points, angle_count: int = DEFAULT_ANGLE_COUNT,
                 score_points=None) -> FitResult:
    """Minimum box over the points, best angle by accumulated distance.

    Ties break toward smaller volume, then smaller angle index. The box
    center follows the fitted extents and may differ from any candidate.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInputError("fit_sampling needs at least one point")
    scored = pts if score_points is None else np.asarray(
        score_points, dtype=np.float64).reshape(-1, 3)
    best = None
    best_key = None
    for j, angle in enumerate(angle_set(angle_count)):
        box = min_box_at_yaw(pts, float(angle))
        key = (fit_score(scored, box), box.volume, j)
        if best_key is None or key < best_key:
            best, best_key = box, key
    return FitResult(best, best_key[2], best_key[0], STRATEGY_SAMPLING,
                     len(pts))


def fit_centrosymmetry(points, candidate_center,
                       angle_count: int = DEFAULT_ANGLE_COUNT,
                       score_points=None) -> FitResult:
    """Reflect points through the candidate center, then fit as above.

    The doubled point set is symmetric about the center, so the fitted
    box center equals the candidate center exactly.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInputError("fit_centrosymmetry needs at least one point")
    center = np.asarray(candidate_center, dtype=np.float64).reshape(3)
    doubled = np.vstack([pts, 2.0 * center - pts])
    if score_points is None:
        scored = doubled
    else:
        sp = np.asarray(score_points, dtype=np.float64).reshape(-1, 3)
        scored = np.vstack([sp, 2.0 * center - sp])
    pad = 16.0 * np.finfo(np.float64).eps
    best = None
    best_key = None
    for j, angle in enumerate(angle_set(angle_count)):
        local = rotate_z(doubled - center, -float(angle))
        half = np.abs(local).max(axis=0)
        dims = np.maximum(2.0 * half * (1.0 + pad) + pad, EPS_DIM)
        box = OrientedBox3(center, dims, float(angle))
        key = (fit_score(scored, box), box.volume, j)
        if best_key is None or key < best_key:
            best, best_key = box, key
    return FitResult(best, best_key[2], best_key[0],
                     STRATEGY_CENTROSYMMETRY, len(pts))


def correct_orientation(fit: FitResult) -> FitResult:
    """Keep yaw when l >= w; otherwise swap l/w and add pi/2 to the yaw.

    The corrected box occupies the same volume; the output yaw lies in
    [0, pi).
    """
    box = fit.box
    if not 0.0 <= box.yaw < math.pi / 2.0:
        raise ValueError(f"expected yaw in [0, pi/2), got {box.yaw}")
    l, w, h = box.dims
    if l >= w:
        return fit
    corrected = OrientedBox3(box.center, (w, l, h), box.yaw + math.pi / 2.0)
    return FitResult(corrected, fit.angle_index, fit.score, fit.strategy,
                     fit.inside_count)


def generate_boundary(sample: LocalSample, assignment: ImplicitAssignment,
                      strategy: str = STRATEGY_SAMPLING,
                      config: BoundaryConfig = BoundaryConfig()) -> FitResult:
    """Inside points -> strategy fit -> orientation correction.

    Raises NoInsidePointsError when nothing exceeds the threshold; callers
    typically drop the candidate since there is no geometric evidence.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    t = assignment.threshold if config.threshold is None else config.threshold
    mask = assignment.values > t
    n_raw = len(sample.raw_points)
    if not config.use_virtual:
        mask = mask.copy()
        mask[n_raw:] = False
    pts = sample.points[mask]
    if len(pts) == 0:
        raise NoInsidePointsError("no points exceed the inside threshold")
    score_points = None
    if config.score_raw_only:
        raw_mask = mask.copy()
        raw_mask[n_raw:] = False
        score_points = sample.points[raw_mask]
    if strategy == STRATEGY_SAMPLING:
        fit = fit_sampling(pts, config.angle_count, score_points)
    else:
        fit = fit_centrosymmetry(pts, sample.candidate.position,
                                 config.angle_count, score_points)
    return correct_orientation(fit)
