"""Local-space sampling around candidate centers and implicit value
assignment through kernels conditioned on each candidate.

Per candidate: a ball query gathers raw points, a uniform lattice supplies
virtual points that fill sparse regions, and a generated pair of pointwise
layers (widths fixed at 16) maps [point feature; point - candidate] to a
value in (0, 1). Points above a threshold count as inside. An oracle
assignment labels points by ground-truth box membership instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .candidates import Candidate
from .errors import EmptyCloudError, ShapeMismatchError
from .geometry import PointCloud, points_in_box

# Per-point feature width (zero-padded). Candidate features keep their own
# width from the candidates module; the two need not match.
POINT_FEATURE_DIM = 8
# Channel width of the two conditioned layers.
HIDDEN_DIM = 16
# Default inside/outside threshold.
DEFAULT_THRESHOLD = 0.5
# Inverse-distance interpolation constant.
KNN_EPS = 1e-8
DEFAULT_KNN = 3


@dataclass(frozen=True)
class SamplingConfig:
    """Ball-query and virtual-lattice parameters."""

    radius: float = 3.2
    max_points: int = 256
    grid_size: int = 10
    interval: tuple = (0.6, 0.6, 0.3)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if any(v <= 0 for v in self.interval):
            raise ValueError("interval components must be positive")


@dataclass(frozen=True, eq=False)
class LocalSample:
    """Raw and virtual points (with features) gathered around a candidate."""

    raw_points: np.ndarray
    raw_features: np.ndarray
    virtual_points: np.ndarray
    virtual_features: np.ndarray
    candidate: Candidate

    @property
    def points(self) -> np.ndarray:
        """Raw points followed by virtual points."""
        return np.vstack([self.raw_points, self.virtual_points])

    @property
    def features(self) -> np.ndarray:
        return np.vstack([self.raw_features, self.virtual_features])

    def __len__(self) -> int:
        return len(self.raw_points) + len(self.virtual_points)


@dataclass(frozen=True, eq=False)
class ImplicitAssignment:
    """Per-point values in [0, 1]; ``inside`` follows the threshold."""

    values: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValueError("implicit values must lie in [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        object.__setattr__(self, "values", values)

    @property
    def inside(self) -> np.ndarray:
        return self.values > self.threshold

    def __len__(self) -> int:
        return len(self.values)


def ball_query(cloud: PointCloud, center, radius: float, max_points: int,
               seed=0) -> np.ndarray:
    """Indices of a uniform random subset of the points strictly within
    ``radius`` of the center; all of them if fewer than ``max_points``."""
    if radius <= 0 or max_points < 1:
        raise ValueError("radius must be > 0 and max_points >= 1")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    delta = cloud.points - center
    inside = np.flatnonzero(np.einsum("ij,ij->i", delta, delta) < radius ** 2)
    if len(inside) <= max_points:
        return inside
    rng = np.random.default_rng(seed)
    chosen = rng.choice(inside, size=max_points, replace=False)
    return np.sort(chosen)


def virtual_lattice(center, grid_size: int, interval) -> np.ndarray:
    """Full grid_size**3 lattice centered on ``center``.

    The extent is (grid_size - 1) * interval per axis, so the lattice is
    symmetric under reflection through the center.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    interval = np.asarray(interval, dtype=np.float64).reshape(3)
    offsets = np.arange(grid_size, dtype=np.float64) - (grid_size - 1) / 2.0
    gx, gy, gz = np.meshgrid(offsets * interval[0], offsets * interval[1],
                             offsets * interval[2], indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]) + center


def virtual_grid(center, grid_size: int, interval, max_points: int,
                 seed=0) -> np.ndarray:
    """A uniform random subset of the virtual lattice around the center."""
    if grid_size < 1 or max_points < 1:
        raise ValueError("grid_size and max_points must be >= 1")
    lattice = virtual_lattice(center, grid_size, interval)
    if len(lattice) <= max_points:
        return lattice
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(lattice), size=max_points, replace=False)
    return lattice[np.sort(chosen)]


def knn_interpolate(query, points: np.ndarray, features: np.ndarray,
                    k: int = DEFAULT_KNN) -> np.ndarray:
    """Inverse-distance-weighted mean of the k nearest features.

    Weights are 1/(d + KNN_EPS), normalized. A query coinciding with a
    point returns that point's feature exactly.
    """
    if len(points) == 0:
        raise EmptyCloudError("cannot interpolate from an empty cloud")
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64).reshape(3)
    dist = np.linalg.norm(points - query, axis=1)
    k = min(k, len(points))
    nearest = np.argpartition(dist, k - 1)[:k]
    d = dist[nearest]
    hit = np.flatnonzero(d == 0.0)
    if len(hit):
        return features[nearest[hit[0]]].copy()
    weights = 1.0 / (d + KNN_EPS)
    weights = weights / weights.sum()
    return weights @ features[nearest]


def point_features(cloud: PointCloud) -> np.ndarray:
    """Cheap per-point features, zero-padded to POINT_FEATURE_DIM:
    height, intensity, scaled BEV range, and a constant channel."""
    n = len(cloud)
    feats = np.zeros((n, POINT_FEATURE_DIM))
    if n == 0:
        return feats
    pts = cloud.points
    feats[:, 0] = pts[:, 2]
    feats[:, 1] = cloud.intensity
    feats[:, 2] = np.hypot(pts[:, 0], pts[:, 1]) / 10.0
    feats[:, 3] = 1.0
    return feats


def build_local_sample(cloud: PointCloud, features: np.ndarray,
                       candidate: Candidate,
                       config: SamplingConfig = SamplingConfig(),
                       seed=0) -> LocalSample:
    """Ball-query raw points and lattice virtual points around a candidate.

    Virtual point features are interpolated from the raw cloud features
    with inverse-distance KNN.
    """
    if len(features) != len(cloud):
        raise ShapeMismatchError(
            f"feature rows {len(features)} != cloud size {len(cloud)}")
    base = np.random.SeedSequence(seed).generate_state(2)
    raw_idx = ball_query(cloud, candidate.position, config.radius,
                         config.max_points, seed=int(base[0]))
    virtual = virtual_grid(candidate.position, config.grid_size,
                           config.interval, config.max_points,
                           seed=int(base[1]))
    if len(cloud):
        virtual_feats = np.vstack([
            knn_interpolate(q, cloud.points, features) for q in virtual])
    else:
        virtual_feats = np.zeros((len(virtual), features.shape[1]
                                  if features.ndim == 2 else POINT_FEATURE_DIM))
    return LocalSample(
        raw_points=cloud.points[raw_idx],
        raw_features=np.asarray(features)[raw_idx],
        virtual_points=virtual,
        virtual_features=virtual_feats,
        candidate=candidate,
    )


def theta_length(point_dim: int) -> int:
    """Flat parameter count of the two conditioned layers."""
    return (point_dim + 1) * HIDDEN_DIM + (HIDDEN_DIM + 1)


@dataclass(eq=False)
class GeneratorParams:
    """Affine-plus-tanh map from [candidate feature; position] to the
    conditioned layer parameters."""

    weight: np.ndarray  # (theta_length, feature_dim + 3)
    bias: np.ndarray    # (theta_length,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or len(self.weight) != len(self.bias):
            raise ShapeMismatchError("generator weight/bias shapes disagree")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("generator parameters must be finite")

    @property
    def point_dim(self) -> int:
        rows = len(self.bias)
        # rows = (d + 1) * HIDDEN_DIM + HIDDEN_DIM + 1
        return (rows - 2 * HIDDEN_DIM - 1) // HIDDEN_DIM

    @classmethod
    def zeros(cls, feature_dim: int, point_feature_dim: int = POINT_FEATURE_DIM):
        rows = theta_length(point_feature_dim + 3)
        return cls(np.zeros((rows, feature_dim + 3)), np.zeros(rows))

    @classmethod
    def random(cls, feature_dim: int, point_feature_dim: int = POINT_FEATURE_DIM,
               seed: int = 0, scale: float = 0.05):
        rng = np.random.default_rng(seed)
        rows = theta_length(point_feature_dim + 3)
        return cls(rng.normal(0.0, scale, (rows, feature_dim + 3)),
                   rng.normal(0.0, scale, rows))


@dataclass(frozen=True, eq=False)
class ConditionedKernels:
    """Flat theta plus its two-layer views: (HIDDEN_DIM x point_dim) and
    (point_dim -> HIDDEN_DIM -> 1) with biases."""

    theta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


def split_theta(theta: np.ndarray, point_dim: int) -> ConditionedKernels:
    expected = theta_length(point_dim)
    if len(theta) != expected:
        raise ShapeMismatchError(
            f"theta length {len(theta)} != expected {expected}")
    n1 = HIDDEN_DIM * point_dim
    w1 = theta[:n1].reshape(HIDDEN_DIM, point_dim)
    b1 = theta[n1:n1 + HIDDEN_DIM]
    w2 = theta[n1 + HIDDEN_DIM:n1 + 2 * HIDDEN_DIM]
    b2 = float(theta[-1])
    return ConditionedKernels(theta, w1, b1, w2, b2)


# Fixed diagonal conditioning of the generator input: positions span tens
# of meters while features are O(1), and tanh(W S x + b) spans the same
# affine family as tanh(W x + b), so this only tames SGD step geometry.
POSITION_SCALE = 0.01


def generator_input(candidate: Candidate) -> np.ndarray:
    return np.concatenate([candidate.feature,
                           candidate.position * POSITION_SCALE])


def condition_kernels(candidate: Candidate,
                      params: GeneratorParams) -> ConditionedKernels:
    """Generate the conditioned layer parameters for one candidate."""
    x = generator_input(candidate)
    if params.weight.shape[1] != len(x):
        raise ShapeMismatchError(
            f"generator expects input {params.weight.shape[1]}, "
            f"candidate provides {len(x)}")
    theta = np.tanh(params.weight @ x + params.bias)
    return split_theta(theta, params.point_dim)


def classifier_inputs(sample: LocalSample) -> np.ndarray:
    """Per-point inputs: [feature; position - candidate position]."""
    return np.hstack([sample.features,
                      sample.points - sample.candidate.position])


def classifier_forward(kernels: ConditionedKernels, inputs: np.ndarray,
                       with_cache: bool = False):
    """Two conditioned layers (rectifier between them) and a sigmoid."""
    inputs = np.atleast_2d(inputs)
    if inputs.shape[1] != kernels.w1.shape[1]:
        raise ShapeMismatchError(
            f"input width {inputs.shape[1]} != kernel width {kernels.w1.shape[1]}")
    pre = inputs @ kernels.w1.T + kernels.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ kernels.w2 + kernels.b2
    values = 1.0 / (1.0 + np.exp(-logits))
    if with_cache:
        return values, (inputs, pre, hidden, logits)
    return values


def assign_values(sample: LocalSample, kernels: ConditionedKernels,
                  threshold: float = DEFAULT_THRESHOLD) -> ImplicitAssignment:
    """Assign an implicit value to every sampled point (raw then virtual)."""
    values = classifier_forward(kernels, classifier_inputs(sample))
    return ImplicitAssignment(values, threshold)


def oracle_assignment(sample: LocalSample, gt_box,
                      threshold: float = DEFAULT_THRESHOLD) -> ImplicitAssignment:
    """Ground-truth labels: 1 inside the box, 0 outside."""
    values = points_in_box(sample.points, gt_box).astype(np.float64)
    return ImplicitAssignment(values, threshold)
