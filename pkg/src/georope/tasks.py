"""Synthetic geotoken tasks, optimisers, training loop and evaluation metrics.

Features are drawn independently of position, so a model can only beat
chance at finding a geotoken's neighbours through its position encoding.
Every instance has an *anchor* token; targets live on the other tokens and
the anchor's own target mass is zero.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .attention import AnchorCrossEntropy, Batch, EncoderKind, GeoTransformer, ModelConfig, backward, forward
from .geo import EARTH, GeoPosition, Geotoken, SphereModel, great_circle_distance, sample_uniform_arrays

log = logging.getLogger(__name__)


class TaskError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(eq=False)
class TaskInstance:
    tokens: list[Geotoken]
    anchor: int
    target: np.ndarray  # distribution over tokens, zero on the anchor

    def __post_init__(self):
        if not 0 <= self.anchor < len(self.tokens):
            raise TaskError(f"anchor {self.anchor} outside 0..{len(self.tokens) - 1}")
        t = np.asarray(self.target, dtype=np.float64)
        if t.shape != (len(self.tokens),) or abs(t.sum() - 1.0) > 1e-12 or np.any(t < 0):
            raise TaskError("target must be a probability vector over the tokens")
        self.target = t

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def distances(self, sphere: SphereModel = EARTH) -> np.ndarray:
        a = self.tokens[self.anchor].position
        return np.array([great_circle_distance(a, t.position, sphere) for t in self.tokens])


def _random_tokens(rng, n_tokens, dim, feature_mean, feature_std, prefix) -> list[Geotoken]:
    lat, lon = sample_uniform_arrays(n_tokens, rng)
    feats = rng.normal(feature_mean, feature_std, size=(n_tokens, dim))
    return [
        Geotoken(f"{prefix}-{j}", GeoPosition(float(lat[j]), float(lon[j])), feats[j]) for j in range(n_tokens)
    ]


def proximity_instance(tokens: list[Geotoken], anchor: int, tau: float, sphere: SphereModel = EARTH) -> TaskInstance:
    """Target over non-anchor tokens proportional to ``exp(-distance / tau)``."""
    if not tau > 0:
        raise TaskError(f"temperature tau must be positive, got {tau!r}")
    if len(tokens) < 2:
        raise TaskError("a task instance needs at least 2 tokens")
    a = tokens[anchor].position
    logits = np.array([-great_circle_distance(a, t.position, sphere) / tau for t in tokens])
    logits[anchor] = -np.inf
    w = np.exp(logits - logits.max())
    return TaskInstance(tokens, anchor, w / w.sum())


def nearest_neighbor_instance(tokens: list[Geotoken], anchor: int, sphere: SphereModel = EARTH) -> TaskInstance:
    """One-hot target on the nearest other token; ties go to the lowest index."""
    if len(tokens) < 2:
        raise TaskError("a task instance needs at least 2 tokens")
    a = tokens[anchor].position
    best, best_d = -1, math.inf
    for j, t in enumerate(tokens):
        if j == anchor:
            continue
        dist = great_circle_distance(a, t.position, sphere)
        if dist < best_d:
            best, best_d = j, dist
    target = np.zeros(len(tokens))
    target[best] = 1.0
    return TaskInstance(tokens, anchor, target)


def gen_proximity_task(
    n_tokens: int,
    n_instances: int,
    seed: int,
    tau: float,
    dim: int = 12,
    sphere: SphereModel = EARTH,
    feature_mean: float = 1.0,
    feature_std: float = 0.5,
) -> list[TaskInstance]:
    if not tau > 0:
        raise TaskError(f"temperature tau must be positive, got {tau!r}")
    if n_tokens < 2:
        raise TaskError(f"n_tokens must be >= 2, got {n_tokens}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_instances):
        tokens = _random_tokens(rng, n_tokens, dim, feature_mean, feature_std, f"p{i}")
        out.append(proximity_instance(tokens, int(rng.integers(n_tokens)), tau, sphere))
    return out


def gen_nearest_neighbor_task(
    n_tokens: int,
    n_instances: int,
    seed: int,
    dim: int = 12,
    sphere: SphereModel = EARTH,
    feature_mean: float = 1.0,
    feature_std: float = 0.5,
) -> list[TaskInstance]:
    if n_tokens < 2:
        raise TaskError(f"n_tokens must be >= 2, got {n_tokens}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_instances):
        tokens = _random_tokens(rng, n_tokens, dim, feature_mean, feature_std, f"n{i}")
        out.append(nearest_neighbor_instance(tokens, int(rng.integers(n_tokens)), sphere))
    return out


def stack(instances: Sequence[TaskInstance]) -> tuple[Batch, np.ndarray, np.ndarray]:
    """Batch, anchor indices and targets for equally sized instances."""
    if not instances:
        raise TaskError("no instances")
    n = instances[0].n_tokens
    if any(inst.n_tokens != n for inst in instances):
        raise TaskError("instances in a batch must have the same number of tokens")
    feats = np.stack([np.stack([t.features for t in inst.tokens]) for inst in instances])
    lat = np.array([[t.position.lat for t in inst.tokens] for inst in instances])
    lon = np.array([[t.position.lon for t in inst.tokens] for inst in instances])
    anchors = np.array([inst.anchor for inst in instances])
    targets = np.stack([inst.target for inst in instances])
    return Batch(feats, lat, lon), anchors, targets


# -- optimisers ----------------------------------------------------------------


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            p -= self.lr * grads[k]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    steps: int = 400
    batch_size: int = 32
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tau: float = 1_000_000.0  # metres, proximity targets only

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        # lr == 0 is allowed: a frozen run is a useful reference point
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise TaskError(f"learning rate must be >= 0, got {self.lr!r}")
        if self.steps < 1:
            raise TaskError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise TaskError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.tau > 0:
            raise TaskError(f"tau must be positive, got {self.tau!r}")

    def make_optimizer(self):
        if self.optimizer is OptimizerKind.SGD:
            return SGD(self.lr)
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


def dataset_loss(model: GeoTransformer, instances: Sequence[TaskInstance]) -> float:
    batch, anchors, targets = stack(instances)
    loss = AnchorCrossEntropy(anchors, targets)
    return loss(model, forward(model, batch, self_mask=True))[0]


def train(
    model: GeoTransformer, instances: Sequence[TaskInstance], config: TrainConfig
) -> tuple[GeoTransformer, list[float]]:
    """Minimise anchor-row cross-entropy with minibatches; returns the model and per-step losses.

    Minibatches walk seeded permutations of the data, so a given (seed, config)
    always produces the same loss curve. The model is updated in place.
    """
    batch, anchors, targets = stack(instances)
    n = batch.shape[0]
    rng = np.random.default_rng(config.seed)
    opt = config.make_optimizer()
    order = rng.permutation(n)
    cursor = 0
    losses = []
    for step in range(config.steps):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = np.sort(order[cursor : cursor + config.batch_size])
        cursor += config.batch_size
        sub = Batch(batch.features[idx], batch.lat[idx], batch.lon[idx])
        with np.errstate(all="ignore"):  # a blow-up is reported below with its step
            value, grads = backward(model, sub, AnchorCrossEntropy(anchors[idx], targets[idx]))
        if not (math.isfinite(value) and all(np.isfinite(g).all() for g in grads.values())):
            raise TrainingError(f"non-finite loss {value!r} at step {step}")
        losses.append(value)
        opt.step(model.params, grads)
    log.debug("trained %d steps, final minibatch loss %.4f", config.steps, losses[-1])
    return model, losses


# -- evaluation -----------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    spearman: Optional[float]
    n_instances: int


def spearman(x, y) -> Optional[float]:
    """Rank correlation, or None when either side is constant or too short."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return None
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.dot(rx, rx) * np.dot(ry, ry)))
    if denom == 0.0:
        return None
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


def evaluate_scores(
    scores: np.ndarray, logits: np.ndarray, instances: Sequence[TaskInstance], sphere: SphereModel = EARTH
) -> EvalReport:
    """Metrics from per-instance anchor rows.

    ``scores`` (N, n) decides retrieval (argmax over non-anchor tokens, first
    index on ties); ``logits`` (N, n) is rank-correlated with negative distance.
    """
    hits = 0
    rhos = []
    for row_s, row_l, inst in zip(scores, logits, instances):
        cand = np.array([j for j in range(inst.n_tokens) if j != inst.anchor])
        pick = cand[int(np.argmax(row_s[cand]))]
        hits += int(pick == int(np.argmax(inst.target)))
        rho = spearman(row_l[cand], -inst.distances(sphere)[cand])
        if rho is not None:
            rhos.append(rho)
    n = len(instances)
    return EvalReport(hits / n if n else 0.0, float(np.mean(rhos)) if rhos else None, n)


def anchor_rows(model: GeoTransformer, instances: Sequence[TaskInstance]) -> tuple[np.ndarray, np.ndarray]:
    """Head-averaged last-layer attention weights and logits on each anchor's row."""
    batch, anchors, _ = stack(instances)
    c = forward(model, batch, self_mask=True).caches[-1]
    b = np.arange(len(instances))
    return c.weights[b, :, anchors, :].mean(axis=1), c.logits[b, :, anchors, :].mean(axis=1)


def evaluate(model: GeoTransformer, instances: Sequence[TaskInstance], sphere: SphereModel = EARTH) -> EvalReport:
    weights, logits = anchor_rows(model, instances)
    return evaluate_scores(weights, logits, instances, sphere)


def chance_band(n_tokens: int, n_instances: int, k: float = 3.0) -> tuple[float, float]:
    """``1/n_tokens +/- k`` binomial standard deviations for ``n_instances`` trials."""
    p = 1.0 / n_tokens
    sd = math.sqrt(p * (1.0 - p) / n_instances)
    return p - k * sd, p + k * sd


@dataclass
class SeedSweep:
    label: str
    seeds: list[int]
    reports: list[EvalReport] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.reports]

    @property
    def median_accuracy(self) -> float:
        return float(np.median(self.accuracies))

    @property
    def median_spearman(self) -> Optional[float]:
        vals = [r.spearman for r in self.reports if r.spearman is not None]
        return float(np.median(vals)) if vals else None


def run_ablation(
    model_configs: dict[str, ModelConfig],
    seeds: Sequence[int],
    train_config: TrainConfig,
    n_tokens: int = 16,
    n_train: int = 2000,
    n_eval: int = 500,
) -> dict[str, SeedSweep]:
    """Train and evaluate each model config on the nearest-neighbour task for every seed.

    Seed ``s`` fixes the training data, the held-out data (seed ``s + 10_000``),
    the model initialisation and the minibatch order.
    """
    out = {label: SeedSweep(label, list(seeds)) for label in model_configs}
    for s in seeds:
        dim = next(iter(model_configs.values())).dim
        train_set = gen_nearest_neighbor_task(n_tokens, n_train, seed=s, dim=dim)
        eval_set = gen_nearest_neighbor_task(n_tokens, n_eval, seed=s + 10_000, dim=dim)
        for label, mc in model_configs.items():
            model = GeoTransformer(replace(mc, seed=s))
            train(model, train_set, replace(train_config, seed=s))
            report = evaluate(model, eval_set)
            log.info("%s seed=%d accuracy=%.3f spearman=%s", label, s, report.accuracy, report.spearman)
            out[label].reports.append(report)
    return out


def default_ablation_configs(dim: int = 12) -> dict[str, ModelConfig]:
    return {
        "none": ModelConfig(dim=dim, encoder=EncoderKind.NONE),
        "spherical-uniform": ModelConfig(dim=dim, encoder=EncoderKind.SPHERICAL, mode="uniform"),
        "spherical-multifreq": ModelConfig(dim=dim, encoder=EncoderKind.SPHERICAL, mode="multifreq"),
    }
