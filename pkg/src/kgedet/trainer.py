"""Head fitting on synthetic feature data, plus the gradient-check oracle.

The synthetic generator stands in for backbone/RoI features: one Gaussian
cluster per class in feature space.  With ``aligned-with-prototypes``
geometry the cluster means are an isometric (affine) image of the prototype
rows, so classes whose prototypes are close also overlap in feature space,
which is what the error-distribution experiments rely on.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import losses as losses_mod
from .errors import NumericError
from .heads import ProjectionHead, classify_batch, project_backward, project_forward
from .losses import Heatmap, LossConfig
from .prototypes import PrototypeSet

GEOMETRIES = ("aligned-with-prototypes", "random")


@dataclass(frozen=True)
class DatasetSpec:
    """Generator settings; everything is derived from these plus the seed."""

    n_samples: int
    n_classes: int
    d_in: int = 32
    covariance_scale: float = 0.1
    geometry: str = "aligned-with-prototypes"
    background_fraction: float = 0.0
    mean_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.covariance_scale < 0:
            raise ValueError("covariance scale must be nonnegative")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ValueError("background fraction must be in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSpec":
        return cls(**obj)


@dataclass
class SyntheticDataset:
    features: np.ndarray  # (n, d_in)
    labels: np.ndarray  # (n,) ints in 0..C, 0 = background
    class_means: np.ndarray  # (C, d_in)
    spec: DatasetSpec

    def __len__(self) -> int:
        return self.features.shape[0]


def generate_dataset(spec: DatasetSpec, prototypes: PrototypeSet | None = None) -> SyntheticDataset:
    """Deterministic per seed.  Aligned geometry embeds the prototype rows
    into feature space with a random orthonormal map scaled by
    ``mean_scale``; Euclidean distances between cluster means are then an
    exact affine image of prototype distances."""
    rng = np.random.default_rng(spec.seed)
    c = spec.n_classes
    if spec.geometry == "aligned-with-prototypes":
        if prototypes is None:
            raise ValueError("aligned geometry requires a prototype set")
        if prototypes.n_classes != c:
            raise ValueError("prototype count disagrees with n_classes")
        if spec.d_in < prototypes.dim:
            raise ValueError("d_in must be >= prototype dim for an isometric embedding")
        gaussian = rng.standard_normal((spec.d_in, prototypes.dim))
        q, r = np.linalg.qr(gaussian)
        q = q * np.sign(np.diag(r))
        means = spec.mean_scale * prototypes.matrix @ q.T
    else:
        directions = rng.standard_normal((c, spec.d_in))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        means = spec.mean_scale * directions

    n_background = int(round(spec.background_fraction * spec.n_samples))
    n_foreground = spec.n_samples - n_background
    per_class = np.full(c, n_foreground // c)
    per_class[: n_foreground % c] += 1

    feats = []
    labels = []
    for cls in range(c):
        block = means[cls] + spec.covariance_scale * rng.standard_normal(
            (per_class[cls], spec.d_in)
        )
        feats.append(block)
        labels.append(np.full(per_class[cls], cls + 1, dtype=np.int64))
    if n_background:
        # uniform shell strictly outside every cluster mean
        radius_lo = 1.25 * max(float(np.linalg.norm(means, axis=1).max()), 1e-9)
        radius_hi = 1.4 * radius_lo
        directions = rng.standard_normal((n_background, spec.d_in))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = rng.uniform(radius_lo, radius_hi, size=n_background)
        feats.append(directions * radii[:, None])
        labels.append(np.zeros(n_background, dtype=np.int64))
    return SyntheticDataset(
        features=np.vstack(feats),
        labels=np.concatenate(labels),
        class_means=means,
        spec=spec,
    )


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class OptimizerSpec:
    learning_rate: float
    steps: int
    batch_size: int = 64
    momentum: float = 0.0
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "OptimizerSpec":
        return cls(**obj)


@dataclass
class TrainReport:
    """Training summary.

    ``loss_trace`` holds the full-dataset loss at every epoch boundary (one
    pass over the shuffled samples) plus after the final step, so it is
    exactly constant when the learning rate is zero.
    """

    loss_trace: list[float]
    final_accuracy: float
    wall_clock_s: float
    steps: int

    def to_json(self, include_wall_clock: bool = True) -> dict:
        obj = {
            "loss_trace": self.loss_trace,
            "final_accuracy": self.final_accuracy,
            "steps": self.steps,
        }
        if include_wall_clock:
            obj["wall_clock_s"] = self.wall_clock_s
        return obj


def _batch_loss(
    batch: np.ndarray,
    labels: np.ndarray,
    config: LossConfig,
    prototypes: PrototypeSet,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. the embeddings.

    Covers the fixed-prototype losses; cross-entropy needs weight-row
    gradients too and is handled directly by ``train``.
    """
    n = batch.shape[0]
    if config.kind == "contrastive":
        values, grads = losses_mod.contrastive_batch(
            batch,
            labels,
            prototypes,
            temperature=config.temperature,
            metric=config.metric,
            include_positive_in_denominator=config.include_positive_in_denominator,
        )
        return float(values.mean()), grads / n
    if config.kind == "hinge":
        total = 0.0
        grads = np.zeros_like(batch)
        for i in range(n):
            if labels[i] < 1:
                continue  # margin loss has no background term
            out = losses_mod.hinge_embedding_loss(
                batch[i],
                int(labels[i]),
                prototypes,
                rng,
                margin_floor=config.margin_floor,
                negative_samples=config.negative_samples,
                metric=config.metric,
            )
            total += out.value
            grads[i] = out.grad_query
        return total / n, grads / n
    if config.kind == "focal":
        # fold the batch into an n x 1 map: each sample is one pixel whose
        # own class plane peaks at 1, so the map loss applies unchanged
        target = np.zeros((n, 1, prototypes.n_classes))
        for i in range(n):
            if labels[i] >= 1:
                target[i, 0, labels[i] - 1] = 1.0
        out = losses_mod.focal_embedding_loss(
            batch.reshape(n, 1, -1),
            prototypes,
            Heatmap(values=target),
            alpha=config.alpha,
            beta=config.beta,
            metric=config.metric,
        )
        return out.value, out.grad_query.reshape(n, -1)
    raise ValueError(f"unsupported loss kind for training: {config.kind!r}")


def _dataset_loss(
    head: ProjectionHead,
    dataset: SyntheticDataset,
    loss_config: LossConfig,
    prototypes: PrototypeSet,
) -> float:
    """Full-dataset loss with a fixed-seed sampler so repeated evaluations
    at the same parameters agree exactly (hinge negatives resample)."""
    embeddings, _ = project_forward(head, dataset.features, loss_config.metric)
    if loss_config.kind == "cross-entropy":
        values, _, _ = losses_mod.cross_entropy_batch(embeddings, dataset.labels, prototypes)
        return float(values.mean())
    value, _ = _batch_loss(
        embeddings, dataset.labels, loss_config, prototypes, np.random.default_rng(0)
    )
    return value


def train(
    head: ProjectionHead,
    dataset: SyntheticDataset,
    loss_config: LossConfig,
    prototypes: PrototypeSet,
    optimizer: OptimizerSpec,
) -> TrainReport:
    """Mini-batch SGD (optional momentum) with analytic gradients.

    Mutates ``head`` in place; with the cross-entropy baseline the prototype
    matrix and explicit background row are learned too.  Deterministic for a
    fixed optimizer seed.  A non-finite loss or diverged parameters abort
    with diagnostics.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(optimizer.seed)
    n = len(dataset)
    order = rng.permutation(n)
    cursor = 0
    vel_w = np.zeros_like(head.weight)
    vel_b = np.zeros_like(head.bias)
    trace = []
    learn_prototypes = loss_config.kind == "cross-entropy"
    for step in range(optimizer.steps):
        if cursor + optimizer.batch_size > n:
            trace.append(_dataset_loss(head, dataset, loss_config, prototypes))
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + optimizer.batch_size]
        cursor += optimizer.batch_size
        feats = dataset.features[idx]
        labels = dataset.labels[idx]

        embeddings, cache = project_forward(head, feats, loss_config.metric)
        if learn_prototypes:
            values, grad_e, grad_rows = losses_mod.cross_entropy_batch(
                embeddings, labels, prototypes
            )
            value = float(values.mean())
            grad_e = grad_e / len(idx)
            grad_rows = grad_rows / len(idx)
        else:
            value, grad_e = _batch_loss(embeddings, labels, loss_config, prototypes, rng)
        if not np.isfinite(value):
            raise NumericError(
                f"non-finite loss at step {step} (kind={loss_config.kind}, "
                f"batch indices {idx[:8].tolist()}...)"
            )

        grad_w, grad_b = project_backward(head, cache, grad_e)
        if optimizer.momentum > 0.0:
            vel_w = optimizer.momentum * vel_w + grad_w
            vel_b = optimizer.momentum * vel_b + grad_b
            grad_w, grad_b = vel_w, vel_b
        head.weight -= optimizer.learning_rate * grad_w
        head.bias -= optimizer.learning_rate * grad_b
        if learn_prototypes:
            prototypes.background_policy.vector[:] -= optimizer.learning_rate * grad_rows[0]
            prototypes.matrix -= optimizer.learning_rate * grad_rows[1:]
        if not (np.all(np.isfinite(head.weight)) and np.all(np.isfinite(head.bias))):
            raise NumericError(
                f"head parameters diverged at step {step} "
                f"(kind={loss_config.kind}, lr={optimizer.learning_rate})"
            )

    trace.append(_dataset_loss(head, dataset, loss_config, prototypes))
    embeddings, _ = project_forward(head, dataset.features, loss_config.metric)
    if learn_prototypes:
        rows = np.vstack([prototypes.background_policy.vector, prototypes.matrix])
        predicted = (embeddings @ rows.T).argmax(axis=1)
    else:
        predicted, _ = classify_batch(embeddings, prototypes, loss_config.metric)
    accuracy = float((predicted == dataset.labels).mean())
    return TrainReport(
        loss_trace=trace,
        final_accuracy=accuracy,
        wall_clock_s=time.perf_counter() - start,
        steps=optimizer.steps,
    )


# ---------------------------------------------------------------------------
# Finite-difference oracle


def finite_difference_check(
    evaluator: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative disagreement between analytic and central-difference
    gradients: max_i |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|).

    ``evaluator`` maps a point to (value, gradient-of-same-shape).
    """
    point = np.asarray(point, dtype=np.float64)
    _, grad = evaluator(point)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != point.shape:
        raise ValueError(f"gradient shape {grad.shape} != point shape {point.shape}")
    worst = 0.0
    flat = point.ravel().copy()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up, _ = evaluator(flat.reshape(point.shape))
        flat[i] = saved - step
        down, _ = evaluator(flat.reshape(point.shape))
        flat[i] = saved
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        g_fd = (up - down) / (2.0 * step)
        g_an = grad.ravel()[i]
        worst = max(worst, abs(g_fd - g_an) / max(1e-8, abs(g_fd) + abs(g_an)))
    return worst


def _random_instance(kind: str, metric: str, rng: np.random.Generator):
    """One gradcheck instance: (evaluator, point).

    Points are kept strictly inside the unit ball and away from L1 sign
    boundaries and hinge kinks so central differences do not straddle a
    subgradient discontinuity.  The Manhattan scales keep L1 distances
    below 2 so focal similarities stay off their clamp.
    """
    from .prototypes import ExplicitBackground, ImplicitBackground, mean_background

    c, dim = 6, 8
    proto_norm = 0.45 if metric == "manhattan" else 0.8
    query_range = (0.15, 0.42) if metric == "manhattan" else (0.3, 0.9)
    matrix = rng.standard_normal((c, dim))
    matrix *= proto_norm / np.linalg.norm(matrix, axis=1, keepdims=True)
    protos = PrototypeSet(
        classes=[f"c{i}" for i in range(c)],
        matrix=matrix,
        background_policy=ImplicitBackground(),
        provenance="random-orthogonal",
    )

    def draw_query() -> np.ndarray:
        while True:
            q = rng.standard_normal(dim)
            q *= rng.uniform(*query_range) / np.linalg.norm(q)
            if np.abs(q[None, :] - protos.matrix).min() > 1e-3:
                return q

    if kind == "contrastive":
        label = int(rng.integers(0, c + 1))
        tau = float(rng.uniform(0.05, 1.0))

        def evaluator(x):
            out = losses_mod.contrastive_loss(x, label, protos, tau, metric)
            return out.value, out.grad_query

        return evaluator, draw_query()

    if kind == "focal":
        h, w = 2, 2
        emap = np.stack([draw_query() for _ in range(h * w)]).reshape(h, w, dim)
        target = rng.uniform(0.0, 0.95, size=(h, w, c))
        target[0, 0, int(rng.integers(0, c))] = 1.0

        def evaluator(x):
            out = losses_mod.focal_embedding_loss(
                x.reshape(h, w, dim), protos, Heatmap(values=target), 2.0, 4.0, metric
            )
            return out.value, out.grad_query

        return evaluator, emap

    if kind == "hinge":
        label = int(rng.integers(1, c + 1))
        r = int(rng.integers(1, 4))
        sample_seed = int(rng.integers(0, 2**31))

        def evaluator(x):
            out = losses_mod.hinge_embedding_loss(
                x,
                label,
                protos,
                np.random.default_rng(sample_seed),  # same negatives every call
                margin_floor=0.1,
                negative_samples=r,
                metric=metric,
            )
            return out.value, out.grad_query

        # reject points near a hinge kink, where the subgradient is one-sided
        while True:
            q = draw_query()
            rows = protos.projected_matrix(metric)
            t_pos = rows[label - 1]
            clear = True
            for f in range(c):
                if f == label - 1:
                    continue
                margin = max(0.1, losses_mod._metric_distance(t_pos, rows[f], metric))
                if abs(margin - losses_mod._metric_distance(q, rows[f], metric)) < 1e-3:
                    clear = False
            if clear:
                return evaluator, q

    if kind == "cross-entropy":
        ce_protos = PrototypeSet(
            classes=protos.classes,
            matrix=matrix.copy(),
            background_policy=mean_background(matrix),
            provenance="learned-baseline",
        )
        label = int(rng.integers(0, c + 1))
        check_weights = bool(rng.integers(0, 2))
        query = draw_query()
        if check_weights:
            # differentiate w.r.t. the stacked weight rows at a fixed query
            def evaluator(x):
                rows = x.reshape(c + 1, dim)
                trial = PrototypeSet(
                    classes=ce_protos.classes,
                    matrix=rows[1:],
                    background_policy=ExplicitBackground(vector=rows[0]),
                    provenance="learned-baseline",
                )
                out = losses_mod.cross_entropy_baseline(query, label, trial)
                return out.value, out.grad_weights

            point = np.vstack([ce_protos.background_policy.vector, ce_protos.matrix])
            return evaluator, point

        def evaluator(x):
            out = losses_mod.cross_entropy_baseline(x, label, ce_protos)
            return out.value, out.grad_query

        return evaluator, query

    raise ValueError(f"unknown loss kind {kind!r}")


_FLAT_COORDINATE = 1e-5


def gradcheck_suite(
    kinds: tuple[str, ...] = ("contrastive", "focal", "hinge", "cross-entropy"),
    instances_per_kind: int = 100,
    seed: int = 0,
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative gradient error per loss kind over seeded random
    instances, alternating between both metrics.

    Instances with a coordinate whose analytic gradient is (near-)zero are
    redrawn: on exactly flat coordinates (L1 sign cancellations) a central
    difference measures only float rounding noise, ~|loss|*eps/step, which
    the 1e-8 relative-error floor turns into a spurious ~1e-3.  This is the
    same plateau exclusion as the hinge-kink rule.
    """
    results = {}
    for kind in kinds:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(instances_per_kind):
            metric = "cosine" if i % 2 == 0 else "manhattan"
            if kind == "cross-entropy":
                metric = "cosine"  # metric-free loss; logits are dot products
            for _ in range(500):
                evaluator, point = _random_instance(kind, metric, rng)
                _, grad = evaluator(point)
                if np.abs(grad).min() >= _FLAT_COORDINATE:
                    break
            else:
                raise NumericError(
                    f"could not draw a plateau-free {kind}/{metric} instance"
                )
            worst = max(worst, finite_difference_check(evaluator, point, step))
        results[kind] = worst
    return results
