"""Embedding losses with analytic gradients with respect to the query.

All losses treat the prototype matrix as fixed (the cross-entropy baseline
is the exception: its weight rows are learnable and get their own gradient).
Gradients are exact away from the hinge kinks and the L1 sign boundaries,
where the subgradient 0 convention is used.

Label convention: class ids are 1-based, id 0 is background.  For the
contrastive loss a background query uses similarity 0 in the numerator, so
its loss reduces to the log-sum-exp of the foreground similarities.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import geometry
from .boxes import AnnotatedBox, validate_box
from .prototypes import ExplicitBackground, PrototypeSet

SIM_CLAMP_EPS = 1e-6

LOSS_KINDS = ("contrastive", "focal", "hinge", "cross-entropy")


@dataclass(frozen=True)
class LossConfig:
    """Loss selection plus its hyperparameters; JSON round-trippable.

    Only the fields of the selected ``kind`` matter: ``temperature`` for
    contrastive, ``alpha``/``beta`` for focal, ``margin_floor`` and
    ``negative_samples`` for hinge.
    """

    kind: str
    metric: str = "cosine"
    temperature: float = 0.07
    alpha: float = 2.0
    beta: float = 4.0
    margin_floor: float = 0.1
    negative_samples: int = 5
    include_positive_in_denominator: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.metric not in ("cosine", "manhattan"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("focal exponents must be nonnegative")
        if self.margin_floor <= 0:
            raise ValueError("margin floor must be positive")
        if self.negative_samples < 1:
            raise ValueError("need at least one negative sample")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "LossConfig":
        return cls(**obj)


@dataclass
class LossOutput:
    """Loss value plus gradient(s).

    ``grad_query`` matches the query shape: (dim,) for per-sample losses and
    (h, w, dim) for map losses.  ``grad_weights`` is populated only by the
    cross-entropy baseline (rows: background then classes).
    """

    value: float
    grad_query: np.ndarray
    grad_weights: np.ndarray | None = None

    def __post_init__(self):
        if not math.isfinite(self.value) or not np.all(np.isfinite(self.grad_query)):
            raise ValueError("loss produced non-finite value or gradient")


# ---------------------------------------------------------------------------
# Contrastive loss


def contrastive_batch(
    embeddings: np.ndarray,
    labels: np.ndarray,
    prototypes: PrototypeSet,
    temperature: float = 0.07,
    metric: str = "cosine",
    include_positive_in_denominator: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample contrastive loss values and query gradients.

    loss = -log( exp(sim_pos / t) / sum_{c in den} exp(sim_c / t) ) where
    the denominator runs over all classes except the positive (InfoNCE-style
    inclusion is available behind the flag).  Background labels (0) use
    sim_pos = 0 and the full foreground denominator.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if prototypes.n_classes < 2:
        raise ValueError("contrastive loss needs at least 2 classes")
    b = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any(labels < 0) or np.any(labels > prototypes.n_classes):
        raise ValueError("labels must be in 0..C")
    rows = prototypes.projected_matrix(metric)
    sims = geometry.similarity_matrix(b, rows, metric)
    n, c = sims.shape

    z = sims / temperature
    foreground = labels >= 1
    pos_z = np.zeros(n)
    pos_z[foreground] = z[np.arange(n)[foreground], labels[foreground] - 1]

    den_mask = np.ones((n, c), dtype=bool)
    if not include_positive_in_denominator:
        den_mask[np.arange(n)[foreground], labels[foreground] - 1] = False

    z_masked = np.where(den_mask, z, -np.inf)
    z_max = z_masked.max(axis=1, keepdims=True)
    expz = np.exp(z_masked - z_max)
    den_sum = expz.sum(axis=1, keepdims=True)
    lse = np.log(den_sum[:, 0]) + z_max[:, 0]
    values = -pos_z + lse

    # dL/d sim: softmax over the denominator set, minus 1/t at the positive
    dl_dsim = (expz / den_sum) / temperature
    pos_idx = (np.arange(n)[foreground], labels[foreground] - 1)
    dl_dsim[pos_idx] -= 1.0 / temperature
    grads = geometry.similarity_backprop(b, rows, dl_dsim, metric)
    return values, grads


def contrastive_loss(
    embedding,
    label: int,
    prototypes: PrototypeSet,
    temperature: float = 0.07,
    metric: str = "cosine",
    include_positive_in_denominator: bool = False,
) -> LossOutput:
    values, grads = contrastive_batch(
        embedding,
        np.array([label]),
        prototypes,
        temperature,
        metric,
        include_positive_in_denominator,
    )
    return LossOutput(value=float(values[0]), grad_query=grads[0])


# ---------------------------------------------------------------------------
# Heatmaps and the focal map loss


@dataclass
class Heatmap:
    """Per-class target planes, shape (h, w, n_classes), values in [0, 1].
    Every rendered groundtruth center attains exactly 1."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("heatmap must have shape (h, w, classes)")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")

    @property
    def n_centers(self) -> int:
        return int((self.values == 1.0).sum())


def default_sigma(width: float, height: float) -> float:
    return max(1.0, min(width, height) / 6.0)


def render_heatmap(
    groundtruth: Sequence[AnnotatedBox],
    classes: Sequence[str],
    shape: tuple[int, int],
    sigma_rule=default_sigma,
) -> Heatmap:
    """Max-composited isotropic Gaussians, one per groundtruth box, centered
    at the rounded box center so the peak value is exactly 1."""
    h, w = shape
    values = np.zeros((h, w, len(classes)), dtype=np.float64)
    index = {name: i for i, name in enumerate(classes)}
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    for gt in groundtruth:
        validate_box(gt.box)
        x1, y1, x2, y2 = gt.box
        if gt.label not in index:
            raise ValueError(f"label {gt.label!r} not in class list")
        if not (0 <= x1 and x2 <= w and 0 <= y1 and y2 <= h):
            raise ValueError(f"box {gt.box} outside the {w}x{h} image")
        sigma = sigma_rule(x2 - x1, y2 - y1)
        cx = min(int(math.floor((x1 + x2) / 2.0 + 0.5)), w - 1)
        cy = min(int(math.floor((y1 + y2) / 2.0 + 0.5)), h - 1)
        gauss = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
        plane = values[:, :, index[gt.label]]
        np.maximum(plane, gauss, out=plane)
    return Heatmap(values=values)


def focal_embedding_loss(
    embedding_map,
    prototypes: PrototypeSet,
    heatmap: Heatmap,
    alpha: float = 2.0,
    beta: float = 4.0,
    metric: str = "cosine",
) -> LossOutput:
    """Penalty-reduced focal loss over per-pixel similarities.

    At center pixels (target exactly 1) the contribution is
    -(1-s)^alpha * log(s); everywhere else -(1-Y)^beta * s^alpha * log(1-s),
    with s the similarity of the pixel embedding to the class prototype,
    clamped to [eps, 1-eps].  The sum is normalized by max(1, #centers).
    """
    emap = np.asarray(embedding_map, dtype=np.float64)
    if emap.ndim != 3:
        raise ValueError("embedding map must have shape (h, w, dim)")
    h, w, dim = emap.shape
    y = heatmap.values
    if y.shape[:2] != (h, w) or y.shape[2] != prototypes.n_classes:
        raise ValueError(
            f"heatmap shape {y.shape} incompatible with map {emap.shape} "
            f"and {prototypes.n_classes} classes"
        )
    flat = emap.reshape(h * w, dim)
    rows = prototypes.projected_matrix(metric)
    raw = geometry.similarity_matrix(flat, rows, metric)
    s = np.clip(raw, SIM_CLAMP_EPS, 1.0 - SIM_CLAMP_EPS)
    unclamped = (raw > SIM_CLAMP_EPS) & (raw < 1.0 - SIM_CLAMP_EPS)
    yy = y.reshape(h * w, -1)
    centers = yy == 1.0

    log_s = np.log(s)
    log_1ms = np.log1p(-s)
    pos = -((1.0 - s) ** alpha) * log_s
    neg = -((1.0 - yy) ** beta) * (s**alpha) * log_1ms
    terms = np.where(centers, pos, neg)
    norm = max(1, int(centers.sum()))
    value = float(terms.sum()) / norm

    # s is clamped to [eps, 1-eps], so the alpha-1 powers stay finite
    one_minus = 1.0 - s
    if alpha == 0.0:
        dpos = -1.0 / s
        dneg = ((1.0 - yy) ** beta) / one_minus
    else:
        dpos = alpha * one_minus ** (alpha - 1.0) * log_s - one_minus**alpha / s
        dneg = -((1.0 - yy) ** beta) * (
            alpha * s ** (alpha - 1.0) * log_1ms - s**alpha / one_minus
        )
    dl_dsim = np.where(centers, dpos, dneg) / norm
    dl_dsim[~unclamped] = 0.0  # clamp plateaus carry no gradient
    grads = geometry.similarity_backprop(flat, rows, dl_dsim, metric)
    return LossOutput(value=value, grad_query=grads.reshape(h, w, dim))


# ---------------------------------------------------------------------------
# Hinge margin loss


def hinge_embedding_loss(
    embedding,
    label: int,
    prototypes: PrototypeSet,
    rng: np.random.Generator,
    margin_floor: float = 0.1,
    negative_samples: int = 5,
    metric: str = "cosine",
) -> LossOutput:
    """Pull toward the true prototype, push sampled negatives out to a
    per-pair margin max(margin_floor, d(t_pos, t_neg)).

    loss = ( d(b, t_pos) + sum_f max(0, margin_f - d(b, t_f)) ) / (r + 1)
    over r negatives sampled uniformly without replacement from the other
    classes.  Subgradient 0 exactly at the hinge kink.
    """
    if label < 1:
        raise ValueError("hinge loss is defined for foreground labels only")
    c = prototypes.n_classes
    if negative_samples > c - 1:
        raise ValueError(f"cannot sample {negative_samples} negatives from {c - 1} classes")
    b = np.asarray(embedding, dtype=np.float64)
    rows = prototypes.projected_matrix(metric)
    candidates = np.array([i for i in range(1, c + 1) if i != label])
    sampled = rng.choice(candidates, size=negative_samples, replace=False)

    t_pos = rows[label - 1]
    d_pos = _metric_distance(b, t_pos, metric)
    value = d_pos
    grad = geometry.distance_gradient(b, t_pos, metric)
    for neg in sampled:
        t_neg = rows[neg - 1]
        margin = max(margin_floor, _metric_distance(t_pos, t_neg, metric))
        d_neg = _metric_distance(b, t_neg, metric)
        if d_neg < margin:
            value += margin - d_neg
            grad = grad - geometry.distance_gradient(b, t_neg, metric)
    scale = 1.0 / (negative_samples + 1)
    return LossOutput(value=value * scale, grad_query=grad * scale)


def _metric_distance(a, b, metric: str) -> float:
    if metric == "cosine":
        return geometry.cosine_distance(a, b)
    return geometry.lk_distance(a, b, 1.0)


# ---------------------------------------------------------------------------
# Cross-entropy baseline (learnable prototypes, explicit background row)


def cross_entropy_batch(
    embeddings: np.ndarray, labels: np.ndarray, weights: PrototypeSet
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Softmax cross-entropy over [background; class] weight rows.

    Returns (values (n,), grad_query (n, dim), grad_weights (c+1, dim));
    grad_weights is summed over the batch.
    """
    if not isinstance(weights.background_policy, ExplicitBackground):
        raise ValueError("cross-entropy baseline needs an explicit background row")
    b = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows = np.vstack([weights.background_policy.vector, weights.matrix])
    if b.shape[1] != rows.shape[1]:
        raise ValueError("embedding dimension mismatch with weight rows")
    logits = b @ rows.T
    logits -= logits.max(axis=1, keepdims=True)
    expz = np.exp(logits)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = b.shape[0]
    values = -np.log(probs[np.arange(n), labels])
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    grad_query = delta @ rows
    grad_weights = delta.T @ b
    return values, grad_query, grad_weights


def cross_entropy_baseline(embedding, label: int, weights: PrototypeSet) -> LossOutput:
    values, grad_q, grad_w = cross_entropy_batch(embedding, np.array([label]), weights)
    return LossOutput(value=float(values[0]), grad_query=grad_q[0], grad_weights=grad_w)
