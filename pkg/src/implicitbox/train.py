"""Loss functions, a from-scratch gradient engine for the small conditioned
classifier / shifter / centerness / refinement heads, a finite-difference
gradient oracle, and minimal SGD loops over synthetic scenes.

All gradients are hand-derived; the finite-difference checker is the
independent oracle that keeps them honest. Training is plain SGD with a
fixed learning rate and is bit-reproducible for a given seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .candidates import (FEATURE_DIM, OracleScorer, OracleShifter, SeedGrid,
                         bev_footprint_mask, cube_nms, make_seed_grid,
                         shift_candidates)
from .errors import DivergenceError, ShapeMismatchError
from .geometry import points_in_box
from .implicit import (GeneratorParams, SamplingConfig, build_local_sample,
                       classifier_inputs, condition_kernels, generator_input,
                       point_features, split_theta, theta_length, HIDDEN_DIM)
from .refine import RefineHeadParams, head_forward

logger = logging.getLogger(__name__)

# Probability clamp used by the cross-entropy style losses.
EPS_PROB = 1e-7
DEFAULT_ALPHA = 0.25
DEFAULT_GAMMA = 2.0


# ---------------------------------------------------------------------------
# losses


def smooth_l1(pred, target) -> float:
    """0.5 d^2 for |d| < 1, |d| - 0.5 otherwise; components summed."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    a = np.abs(d)
    return float(np.sum(np.where(a < 1.0, 0.5 * d * d, a - 0.5)))


def _smooth_l1_grad(pred, target) -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.clip(d, -1.0, 1.0)


def bce(p, target):
    """Binary cross entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS_PROB, 1.0 - EPS_PROB)
    t = np.asarray(target, dtype=np.float64)
    out = -t * np.log(p) - (1.0 - t) * np.log(1.0 - p)
    return out if out.ndim else float(out)


def _bce_grad(p, target) -> np.ndarray:
    """d bce / d p, zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    pc = np.clip(p, EPS_PROB, 1.0 - EPS_PROB)
    live = (p > EPS_PROB) & (p < 1.0 - EPS_PROB)
    return np.where(live, -t / pc + (1.0 - t) / (1.0 - pc), 0.0)


def focal_loss(p, target, alpha: float = DEFAULT_ALPHA,
               gamma: float = DEFAULT_GAMMA):
    """Quality-focal form for soft targets: |t - p|^gamma * BCE(p, t),
    scaled by alpha on positives (target > 0) and left unscaled on
    negatives, so gamma=0 with alpha=1 reduces to plain BCE."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    weight = np.where(t > 0.0, alpha, 1.0)
    out = weight * np.abs(t - p) ** gamma * np.asarray(bce(p, t))
    return out if out.ndim else float(out)


def _focal_grad(p, target, alpha: float = DEFAULT_ALPHA,
                gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    weight = np.where(t > 0.0, alpha, 1.0)
    diff = t - p
    mod = np.abs(diff) ** gamma
    dmod = np.where(diff == 0.0, 0.0,
                    -gamma * np.abs(diff) ** (gamma - 1.0) * np.sign(diff))
    return weight * (dmod * np.asarray(bce(p, t)) + mod * _bce_grad(p, t))


@dataclass(frozen=True)
class LossWeights:
    """Balancing coefficients; defaults follow the combined objective."""

    offset: float = 1.0
    centerness: float = 1.0
    implicit: float = 2.0
    classification: float = 1.0
    box: float = 2.0
    direction: float = 0.2


@dataclass(frozen=True, eq=False)
class TrainBatch:
    """Targets and positive index sets for one optimization step.

    ``pixel_positive`` indexes BEV seeds inside a ground-truth footprint;
    ``implicit_targets`` carries one label vector per positive candidate.
    """

    pixel_positive: np.ndarray
    offset_targets: np.ndarray
    centerness_targets: np.ndarray
    implicit_targets: list
    class_targets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    box_targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))
    direction_targets: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True, eq=False)
class Predictions:
    """Model outputs matching a TrainBatch, shape for shape."""

    offsets: np.ndarray
    centerness: np.ndarray
    implicit_values: list
    class_confidence: np.ndarray = field(default_factory=lambda: np.zeros(0))
    box_deltas: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))
    direction_prob: np.ndarray = field(default_factory=lambda: np.zeros(0))


def total_loss(batch: TrainBatch, predictions: Predictions,
               weights: LossWeights = LossWeights()):
    """Weighted sum of the six terms; returns (total, per-term breakdown).

    Offset and centerness terms normalize by the positive pixel count
    (the centerness sum still runs over every pixel); the implicit term
    averages the per-candidate mean BCE over positive candidates. Empty
    positive sets zero the affected term.
    """
    n_pos = len(batch.pixel_positive)
    if n_pos == 0:
        logger.warning("no positive pixels; offset/centerness terms are 0")
        offset_term = 0.0
        centerness_term = 0.0
    else:
        offset_term = sum(
            smooth_l1(predictions.offsets[i], batch.offset_targets[i])
            for i in batch.pixel_positive) / n_pos
        centerness_term = float(np.sum(focal_loss(
            predictions.centerness, batch.centerness_targets))) / n_pos

    if len(batch.implicit_targets) == 0:
        logger.warning("no positive candidates; implicit term is 0")
        implicit_term = 0.0
    else:
        implicit_term = float(np.mean([
            np.mean(bce(values, targets))
            for values, targets in zip(predictions.implicit_values,
                                       batch.implicit_targets)]))

    k = len(batch.class_targets)
    cls_term = (float(np.mean(focal_loss(predictions.class_confidence,
                                         batch.class_targets)))
                if k else 0.0)
    positive = np.asarray(batch.class_targets) > 0.5
    if positive.any():
        rows = np.flatnonzero(positive)
        box_term = sum(smooth_l1(predictions.box_deltas[i],
                                 batch.box_targets[i]) for i in rows) / len(rows)
        dir_term = float(np.mean(bce(predictions.direction_prob[rows],
                                     batch.direction_targets[rows])))
    else:
        if k:
            logger.warning("no positive boxes; box/direction terms are 0")
        box_term = 0.0
        dir_term = 0.0

    breakdown = {
        "offset": offset_term,
        "centerness": centerness_term,
        "implicit": implicit_term,
        "classification": cls_term,
        "box": box_term,
        "direction": dir_term,
    }
    total = (weights.offset * offset_term
             + weights.centerness * centerness_term
             + weights.implicit * implicit_term
             + weights.classification * cls_term
             + weights.box * box_term
             + weights.direction * dir_term)
    return total, breakdown


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f, params: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a flat parameter vector to (loss, gradient). The relative
    error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if not 1e-6 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-6, 1e-3]")
    params = np.asarray(params, dtype=np.float64)
    _, analytic = f(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ShapeMismatchError("gradient shape != parameter shape")
    worst = 0.0
    for i in range(len(params)):
        probe = params.copy()
        probe[i] = params[i] + step
        hi, _ = f(probe)
        probe[i] = params[i] - step
        lo, _ = f(probe)
        numeric = (hi - lo) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# conditioned implicit classifier


@dataclass(eq=False)
class ClassifierItem:
    """One candidate's training example: generator input, per-point
    classifier inputs, and 0/1 inside labels."""

    gen_input: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray


class ImplicitClassifier:
    """Kernel generator plus the conditioned two-layer point classifier."""

    def __init__(self, params: GeneratorParams):
        self.params = params

    @property
    def point_dim(self) -> int:
        return self.params.point_dim

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.params.weight.ravel(), self.params.bias])

    def from_vector(self, vec: np.ndarray) -> GeneratorParams:
        w = self.params.weight
        n = w.size
        return GeneratorParams(np.asarray(vec[:n]).reshape(w.shape).copy(),
                               np.asarray(vec[n:]).copy())

    def values_for(self, item: ClassifierItem,
                   params: GeneratorParams | None = None) -> np.ndarray:
        params = params or self.params
        theta = np.tanh(params.weight @ item.gen_input + params.bias)
        kernels = split_theta(theta, self.point_dim)
        pre = item.inputs @ kernels.w1.T + kernels.b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ kernels.w2 + kernels.b2
        return 1.0 / (1.0 + np.exp(-logits))

    def loss_and_grad(self, items, params: GeneratorParams | None = None):
        """Mean per-candidate BCE and its gradient w.r.t. the generator."""
        params = params or self.params
        if isinstance(items, ClassifierItem):
            items = [items]
        d = self.point_dim
        grad_w = np.zeros_like(params.weight)
        grad_b = np.zeros_like(params.bias)
        total = 0.0
        for item in items:
            raw = params.weight @ item.gen_input + params.bias
            theta = np.tanh(raw)
            kernels = split_theta(theta, d)
            pre = item.inputs @ kernels.w1.T + kernels.b1
            hidden = np.maximum(pre, 0.0)
            logits = hidden @ kernels.w2 + kernels.b2
            values = 1.0 / (1.0 + np.exp(-logits))
            n = len(values)
            total += float(np.mean(bce(values, item.labels)))

            dlogit = (_bce_grad(values, item.labels)
                      * values * (1.0 - values)) / n
            dw2 = hidden.T @ dlogit
            db2 = float(dlogit.sum())
            dhidden = np.outer(dlogit, kernels.w2)
            dpre = dhidden * (pre > 0.0)
            dw1 = dpre.T @ item.inputs
            db1 = dpre.sum(axis=0)
            dtheta = np.concatenate([dw1.ravel(), db1, dw2, [db2]])
            draw = dtheta * (1.0 - theta * theta)
            grad_w += np.outer(draw, item.gen_input)
            grad_b += draw
        count = len(items)
        return total / count, (grad_w / count, grad_b / count)

    def vector_loss_and_grad(self, items):
        """Flat-vector adapter for :func:`grad_check`."""
        def f(vec):
            params = self.from_vector(vec)
            loss, (gw, gb) = self.loss_and_grad(items, params)
            return loss, np.concatenate([gw.ravel(), gb])
        return f


def build_classifier_items(scenes, sampling: SamplingConfig = SamplingConfig(),
                           cell_size: float = 0.8, top_k: int = 64,
                           seed: int = 0) -> list[ClassifierItem]:
    """Oracle-labeled candidate samples from the standard pipeline."""
    items = []
    for s_idx, scene in enumerate(scenes):
        if len(scene.cloud) == 0 or len(scene.boxes) == 0:
            continue
        feats = point_features(scene.cloud)
        grid = make_seed_grid(scene, cell_size)
        if len(grid) == 0:
            continue
        cands = shift_candidates(grid, OracleShifter(scene.boxes),
                                 OracleScorer(scene.boxes))
        for c_idx, cand in enumerate(cube_nms(cands, top_k)):
            box = next((b for b in scene.boxes
                        if points_in_box(cand.position.reshape(1, 3), b)[0]),
                       None)
            if box is None:
                continue
            sample = build_local_sample(scene.cloud, feats, cand, sampling,
                                        seed=(seed, s_idx, c_idx))
            items.append(ClassifierItem(
                gen_input=generator_input(cand),
                inputs=classifier_inputs(sample),
                labels=points_in_box(sample.points, box).astype(np.float64)))
    return items


def train_implicit_classifier(scenes, epochs: int = 30, lr: float = 0.5,
                              seed: int = 0,
                              sampling: SamplingConfig = SamplingConfig()):
    """SGD on the per-candidate BCE over oracle-labeled samples.

    Returns (classifier, loss curve); the curve holds one mean step loss
    per epoch. Raises DivergenceError on a non-finite loss.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    items = build_classifier_items(scenes, sampling, seed=seed)
    if not items:
        raise ValueError("scenes produced no positive candidates")
    model = ImplicitClassifier(GeneratorParams.random(
        FEATURE_DIM, len(items[0].inputs[0]) - 3, seed=seed))
    rng = np.random.default_rng(seed)
    curve = []
    for _ in range(int(epochs)):
        order = rng.permutation(len(items))
        losses = []
        for idx in order:
            loss, (gw, gb) = model.loss_and_grad(items[int(idx)])
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss}")
            model.params = GeneratorParams(model.params.weight - lr * gw,
                                           model.params.bias - lr * gb)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return model, curve


def implicit_accuracy(model: ImplicitClassifier, scenes,
                      sampling: SamplingConfig = SamplingConfig(),
                      seed: int = 0) -> float:
    """Inside/outside accuracy of the classifier against oracle labels."""
    items = build_classifier_items(scenes, sampling, seed=seed)
    correct = 0
    count = 0
    for item in items:
        values = model.values_for(item)
        correct += int(np.sum((values > 0.5) == (item.labels > 0.5)))
        count += len(values)
    return correct / count if count else 0.0


# ---------------------------------------------------------------------------
# learned shifter


class ShiftModel:
    """Two-layer tanh MLP from seed features to a 3D center offset."""

    HIDDEN = 32

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)

    @classmethod
    def random(cls, feature_dim: int = FEATURE_DIM, seed: int = 0,
               scale: float = 0.05):
        rng = np.random.default_rng(seed)
        h = cls.HIDDEN
        return cls(rng.normal(0, scale, (h, feature_dim)),
                   rng.normal(0, scale, h),
                   rng.normal(0, scale, (3, h)),
                   rng.normal(0, scale, 3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1,
                               self.w2.ravel(), self.b2])

    def from_vector(self, vec) -> ShiftModel:
        n1 = self.w1.size
        n2 = n1 + self.b1.size
        n3 = n2 + self.w2.size
        return ShiftModel(np.asarray(vec[:n1]).reshape(self.w1.shape).copy(),
                          np.asarray(vec[n1:n2]).copy(),
                          np.asarray(vec[n2:n3]).reshape(self.w2.shape).copy(),
                          np.asarray(vec[n3:]).copy())

    def forward(self, features: np.ndarray) -> np.ndarray:
        hidden = np.tanh(np.atleast_2d(features) @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2

    def loss_and_grad(self, features: np.ndarray, targets: np.ndarray):
        """Mean per-row smooth-L1 against target offsets."""
        features = np.atleast_2d(features)
        targets = np.atleast_2d(targets)
        m = len(features)
        pre = features @ self.w1.T + self.b1
        hidden = np.tanh(pre)
        pred = hidden @ self.w2.T + self.b2
        loss = sum(smooth_l1(pred[i], targets[i]) for i in range(m)) / m
        dpred = _smooth_l1_grad(pred, targets) / m
        gw2 = dpred.T @ hidden
        gb2 = dpred.sum(axis=0)
        dhidden = dpred @ self.w2
        dpre = dhidden * (1.0 - hidden * hidden)
        gw1 = dpre.T @ features
        gb1 = dpre.sum(axis=0)
        return loss, np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])

    def vector_loss_and_grad(self, features, targets):
        def f(vec):
            return self.from_vector(vec).loss_and_grad(features, targets)
        return f


class LearnedShifter:
    """Adapter: predicted offsets, zero feature offsets."""

    def __init__(self, model: ShiftModel):
        self.model = model

    def __call__(self, grid: SeedGrid):
        return self.model.forward(grid.features), np.zeros_like(grid.features)


def shifter_training_data(scenes, cell_size: float = 0.8):
    """Positive seeds and their true offsets to the enclosing box center."""
    feats = []
    targets = []
    for scene in scenes:
        if len(scene.cloud) == 0:
            continue
        grid = make_seed_grid(scene, cell_size)
        if len(grid) == 0:
            continue
        claimed = np.zeros(len(grid), dtype=bool)
        for box in scene.boxes:
            mask = bev_footprint_mask(grid.positions, box) & ~claimed
            if mask.any():
                feats.append(grid.features[mask])
                targets.append(box.center - grid.positions[mask])
                claimed |= mask
    if not feats:
        return np.zeros((0, FEATURE_DIM)), np.zeros((0, 3))
    return np.vstack(feats), np.vstack(targets)


def train_shifter(scenes, epochs: int = 80, lr: float = 0.05, seed: int = 0):
    """Gradient descent on the positive-seed offset loss."""
    features, targets = shifter_training_data(scenes)
    if len(features) == 0:
        raise ValueError("no positive seeds in the given scenes")
    model = ShiftModel.random(features.shape[1], seed=seed)
    curve = []
    for _ in range(int(epochs)):
        loss, grad = model.loss_and_grad(features, targets)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss}")
        model = model.from_vector(model.to_vector() - lr * grad)
        curve.append(loss)
    return model, curve


# ---------------------------------------------------------------------------
# learned centerness scorer


class CenternessModel:
    """Two-layer tanh MLP with a sigmoid output scoring candidate quality."""

    HIDDEN = 32

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = float(b2)

    @classmethod
    def random(cls, feature_dim: int = FEATURE_DIM, seed: int = 0,
               scale: float = 0.05):
        rng = np.random.default_rng(seed)
        h = cls.HIDDEN
        return cls(rng.normal(0, scale, (h, feature_dim)),
                   rng.normal(0, scale, h),
                   rng.normal(0, scale, h),
                   float(rng.normal(0, scale)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def from_vector(self, vec) -> CenternessModel:
        n1 = self.w1.size
        n2 = n1 + self.b1.size
        n3 = n2 + self.w2.size
        return CenternessModel(
            np.asarray(vec[:n1]).reshape(self.w1.shape).copy(),
            np.asarray(vec[n1:n2]).copy(), np.asarray(vec[n2:n3]).copy(),
            float(vec[n3]))

    def forward(self, features: np.ndarray) -> np.ndarray:
        hidden = np.tanh(np.atleast_2d(features) @ self.w1.T + self.b1)
        logits = hidden @ self.w2 + self.b2
        return 1.0 / (1.0 + np.exp(-logits))

    def loss_and_grad(self, features: np.ndarray, targets: np.ndarray,
                      n_positive: int | None = None):
        """Focal loss summed over all seeds, normalized by the positives."""
        features = np.atleast_2d(features)
        targets = np.asarray(targets, dtype=np.float64)
        if n_positive is None:
            n_positive = max(int(np.count_nonzero(targets > 0)), 1)
        pre = features @ self.w1.T + self.b1
        hidden = np.tanh(pre)
        logits = hidden @ self.w2 + self.b2
        p = 1.0 / (1.0 + np.exp(-logits))
        loss = float(np.sum(focal_loss(p, targets))) / n_positive
        dlogit = _focal_grad(p, targets) * p * (1.0 - p) / n_positive
        gw2 = hidden.T @ dlogit
        gb2 = float(dlogit.sum())
        dhidden = np.outer(dlogit, self.w2)
        dpre = dhidden * (1.0 - hidden * hidden)
        gw1 = dpre.T @ features
        gb1 = dpre.sum(axis=0)
        return loss, np.concatenate([gw1.ravel(), gb1, gw2, [gb2]])

    def vector_loss_and_grad(self, features, targets):
        def f(vec):
            return self.from_vector(vec).loss_and_grad(features, targets)
        return f


class LearnedScorer:
    """Adapter matching the scorer protocol of shift_candidates."""

    def __init__(self, model: CenternessModel):
        self.model = model

    def __call__(self, positions: np.ndarray, features: np.ndarray):
        return self.model.forward(features)


def train_centerness(scenes, shifter=None, epochs: int = 80, lr: float = 0.05,
                     seed: int = 0):
    """Train the scorer on candidates produced by the given shifter
    (oracle shifting per scene when none is given)."""
    feats = []
    targets = []
    n_positive = 0
    for scene in scenes:
        if len(scene.cloud) == 0 or len(scene.boxes) == 0:
            continue
        grid = make_seed_grid(scene)
        if len(grid) == 0:
            continue
        scene_shifter = shifter or OracleShifter(scene.boxes)
        offsets, feat_offsets = scene_shifter(grid)
        positions = grid.positions + offsets
        feats.append(grid.features + feat_offsets)
        scores = OracleScorer(scene.boxes)(positions, grid.features)
        targets.append(scores)
        n_positive += int(np.count_nonzero(scores > 0))
    if not feats:
        raise ValueError("no seeds in the given scenes")
    features = np.vstack(feats)
    targets = np.concatenate(targets)
    model = CenternessModel.random(features.shape[1], seed=seed)
    curve = []
    for _ in range(int(epochs)):
        loss, grad = model.loss_and_grad(features, targets,
                                         max(n_positive, 1))
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss}")
        model = model.from_vector(model.to_vector() - lr * grad)
        curve.append(loss)
    return model, curve


# ---------------------------------------------------------------------------
# refinement head loss


def head_loss_and_grad(params: RefineHeadParams, descriptor: np.ndarray,
                       class_target: float, box_target: np.ndarray,
                       direction_target: float,
                       weights: LossWeights = LossWeights()):
    """Combined classification / box / direction loss with its gradient."""
    (conf, delta, dir_prob), cache = head_forward(params, descriptor,
                                                  with_cache=True)
    d, z1, h1, z2, h2, _, _ = cache
    box_target = np.asarray(box_target, dtype=np.float64)
    loss = (weights.classification * focal_loss(conf, class_target)
            + weights.box * smooth_l1(delta, box_target)
            + weights.direction * float(bce(dir_prob, direction_target)))

    dconf_logit = (weights.classification
                   * float(_focal_grad(conf, class_target))
                   * conf * (1.0 - conf))
    ddelta = weights.box * _smooth_l1_grad(delta, box_target)
    ddir_logit = (weights.direction
                  * float(_bce_grad(dir_prob, direction_target))
                  * dir_prob * (1.0 - dir_prob))

    dh2 = (params.conf_w * dconf_logit + params.box_w.T @ ddelta
           + params.dir_w * ddir_logit)
    dz2 = dh2 * (1.0 - h2 * h2)
    gw2 = np.outer(dz2, h1)
    gb2 = dz2
    dh1 = params.w2.T @ dz2
    dz1 = dh1 * (1.0 - h1 * h1)
    gw1 = np.outer(dz1, d)
    gb1 = dz1
    grads = RefineHeadParams(
        w1=gw1, b1=gb1, w2=gw2, b2=gb2,
        conf_w=h2 * dconf_logit, conf_b=dconf_logit,
        box_w=np.outer(ddelta, h2), box_b=ddelta,
        dir_w=h2 * ddir_logit, dir_b=ddir_logit,
    )
    return loss, grads


def head_vector_loss_and_grad(template: RefineHeadParams, descriptor,
                              class_target, box_target, direction_target,
                              weights: LossWeights = LossWeights()):
    """Flat-vector adapter over :func:`head_loss_and_grad`."""
    def f(vec):
        params = template.from_vector(vec)
        loss, grads = head_loss_and_grad(params, descriptor, class_target,
                                         box_target, direction_target, weights)
        return loss, grads.to_vector()
    return f


def write_loss_curve(path, curves: dict):
    """CSV with one row per epoch: epoch, then one column per curve."""
    names = list(curves)
    length = max((len(c) for c in curves.values()), default=0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch," + ",".join(names) + "\n")
        for i in range(length):
            cells = [f"{curves[n][i]:.9g}" if i < len(curves[n]) else ""
                     for n in names]
            fh.write(f"{i}," + ",".join(cells) + "\n")
