"""Decoding machinery of the embedding classification heads.

A head is a tanh-then-linear map from backbone features into the prototype
space; classification is a nearest-prototype search with either an explicit
background vector competing in the argmax or an implicit similarity
threshold.  Dense maps decode into detections by per-class distance fields
and an 8-connected local-minima search; set predictions are matched to
groundtruth with a Hungarian assignment whose classification cost is the
negative log similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels, geometry
from .boxes import Box, giou, iou  # noqa: F401  (re-exported: part of this surface)
from .prototypes import ImplicitBackground, PrototypeSet

SIM_FLOOR = 1e-6  # clamp for log-similarity matching costs


@dataclass
class ProjectionHead:
    """Linear map applied to tanh-squashed features: out = tanh(f) @ weight + bias."""

    weight: np.ndarray  # (d_in, d)
    bias: np.ndarray  # (d,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (d_in, d) with a matching bias")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def initialize(cls, d_in: int, d_out: int, seed: int = 0, scale: float = 0.1):
        rng = np.random.default_rng(seed)
        return cls(
            weight=scale * rng.standard_normal((d_in, d_out)) / np.sqrt(d_in),
            bias=np.zeros(d_out),
        )

    def to_json(self) -> dict:
        return {
            "weight": [[float(v) for v in row] for row in self.weight],
            "bias": [float(v) for v in self.bias],
        }


class HeadCache(NamedTuple):
    tanh_features: np.ndarray
    pre_projection: np.ndarray
    projected: bool


def project_forward(
    head: ProjectionHead, features, metric: str = "cosine"
) -> tuple[np.ndarray, HeadCache]:
    """Batch forward pass returning the cache needed for the backward pass.

    For the Manhattan metric the output is additionally projected into the
    unit ball, as the similarity mapping requires.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if f.shape[1] != head.d_in:
        raise ValueError(f"feature length {f.shape[1]} != head d_in {head.d_in}")
    squashed = np.tanh(f)
    z = squashed @ head.weight + head.bias
    if metric == "manhattan":
        out = geometry.project_unit_sphere(z)
        return out, HeadCache(squashed, z, True)
    return z, HeadCache(squashed, z, False)


def project_backward(
    head: ProjectionHead, cache: HeadCache, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (d loss / d weight, d loss / d bias) given d loss / d output."""
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    if cache.projected:
        z = cache.pre_projection
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        outside = norms[:, 0] > 1.0
        if np.any(outside):
            g = g.copy()
            zo = z[outside]
            no = norms[outside]
            y = zo / no
            # Jacobian of z/|z| is (I - y y^T)/|z|
            g[outside] = (g[outside] - (g[outside] * y).sum(1, keepdims=True) * y) / no
    return cache.tanh_features.T @ g, g.sum(axis=0)


def project(head: ProjectionHead, feature, metric: str = "cosine") -> np.ndarray:
    """Map one feature vector (or a batch) into the embedding space."""
    out, _ = project_forward(head, feature, metric)
    return out[0] if np.asarray(feature).ndim == 1 else out


# ---------------------------------------------------------------------------
# Nearest-neighbor classification


@dataclass(frozen=True)
class Classification:
    """class_id 0 means background; score is the winning similarity."""

    class_id: int
    score: float
    similarities: np.ndarray
    background_similarity: float | None = None


def classify_nn(embedding, prototypes: PrototypeSet, metric: str = "cosine") -> Classification:
    """Nearest-prototype decision under the set's background policy.

    Similarity ties break toward the lowest class id; the explicit
    background vector wins ties as class 0.
    """
    rows = prototypes.projected_matrix(metric)
    sims = geometry.similarity_matrix(embedding, rows, metric)[0]
    policy = prototypes.background_policy
    best = int(np.argmax(sims))  # first maximum: lowest class id wins ties
    if isinstance(policy, ImplicitBackground):
        if sims[best] < policy.threshold:
            return Classification(0, float(sims[best]), sims)
        return Classification(best + 1, float(sims[best]), sims)
    bg_vec = (
        geometry.project_unit_sphere(policy.vector) if metric == "manhattan" else policy.vector
    )
    bg_sim = geometry.similarity(embedding, bg_vec, metric)
    if bg_sim >= sims[best]:
        return Classification(0, float(bg_sim), sims, background_similarity=bg_sim)
    return Classification(best + 1, float(sims[best]), sims, background_similarity=bg_sim)


def classify_batch(
    embeddings, prototypes: PrototypeSet, metric: str = "cosine"
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-prototype ids (0 = background) and winning scores."""
    rows = prototypes.projected_matrix(metric)
    sims = geometry.similarity_matrix(embeddings, rows, metric)
    best = sims.argmax(axis=1)
    scores = sims[np.arange(sims.shape[0]), best]
    ids = best + 1
    policy = prototypes.background_policy
    if isinstance(policy, ImplicitBackground):
        background = scores < policy.threshold
        ids = np.where(background, 0, ids)
    else:
        bg_vec = (
            geometry.project_unit_sphere(policy.vector)
            if metric == "manhattan"
            else policy.vector
        )
        bg = geometry.similarity_matrix(embeddings, bg_vec, metric)[:, 0]
        background = bg >= scores
        ids = np.where(background, 0, ids)
        scores = np.where(background, bg, scores)
    return ids.astype(np.int64), scores


# ---------------------------------------------------------------------------
# Keypoint decoding over distance fields


@dataclass(frozen=True)
class Detection:
    """A decoded center: unit box at the peak pixel, 1-based class id."""

    box: Box
    class_id: int
    score: float


def decode_keypoints(
    embedding_map,
    prototypes: PrototypeSet,
    metric: str = "cosine",
    background_threshold: float = 0.9,
) -> list[Detection]:
    """Per-class distance fields -> thresholded 8-connected minima -> detections.

    ``background_threshold`` is a distance: only pixels strictly closer than
    it to a prototype can become detections (0.9 corresponds to similarity
    0.55).  Plateau ties keep the first pixel in raster order.
    """
    emap = np.asarray(embedding_map, dtype=np.float64)
    if emap.ndim != 3 or emap.size == 0:
        raise ValueError("embedding map must be a non-empty (h, w, dim) array")
    h, w, dim = emap.shape
    rows = prototypes.projected_matrix(metric)
    distances = geometry.distance_matrix(emap.reshape(h * w, dim), rows, metric)
    detections = []
    for c in range(prototypes.n_classes):
        dfield = np.ascontiguousarray(distances[:, c].reshape(h, w))
        for y, x in _kernels.local_minima8(dfield, background_threshold):
            score = min(max(1.0 - dfield[y, x] / 2.0, 0.0), 1.0)
            detections.append(
                Detection(
                    box=(float(x), float(y), float(x + 1), float(y + 1)),
                    class_id=c + 1,
                    score=score,
                )
            )
    return detections


# ---------------------------------------------------------------------------
# Hungarian matching with a similarity classification cost


@dataclass(frozen=True)
class MatchResult:
    pairs: list[tuple[int, int]]  # (groundtruth index, prediction index)
    total_cost: float
    unmatched_predictions: list[int]


def hungarian_match(
    pred_boxes,
    pred_embeddings,
    gt_boxes,
    gt_labels,
    prototypes: PrototypeSet,
    weights: tuple[float, float, float] = (1.0, 2.0, 5.0),
    metric: str = "cosine",
    image_size: tuple[float, float] | None = None,
) -> MatchResult:
    """Minimum-cost one-to-one assignment of groundtruth to predictions.

    cost[i, j] = -w_sim * log sim(e_j, t_{c_i}) + w_giou * (1 - giou)
                 + w_l1 * |box_i - box_j|_1, boxes normalized to [0, 1]
    (pass ``image_size=(width, height)`` to normalize pixel boxes).
    Predictions left unassigned are background.
    """
    pb = np.atleast_2d(np.asarray(pred_boxes, dtype=np.float64))
    gb = np.atleast_2d(np.asarray(gt_boxes, dtype=np.float64))
    emb = np.atleast_2d(np.asarray(pred_embeddings, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(gt_labels, dtype=np.int64))
    n_pred, n_gt = pb.shape[0], gb.shape[0]
    if n_gt > n_pred:
        raise ValueError(f"more groundtruth ({n_gt}) than predictions ({n_pred})")
    if np.any(labels < 1) or np.any(labels > prototypes.n_classes):
        raise ValueError("groundtruth labels must be 1..C")
    w_sim, w_giou, w_l1 = weights

    rows = prototypes.projected_matrix(metric)
    sims = geometry.similarity_matrix(emb, rows, metric)
    sims = np.clip(sims, SIM_FLOOR, None)

    if image_size is not None:
        sx, sy = float(image_size[0]), float(image_size[1])
        scale = np.array([sx, sy, sx, sy])
        pb_norm, gb_norm = pb / scale, gb / scale
    else:
        pb_norm, gb_norm = pb, gb

    cost = np.empty((n_gt, n_pred))
    for i in range(n_gt):
        for j in range(n_pred):
            cost[i, j] = (
                -w_sim * np.log(sims[j, labels[i] - 1])
                + w_giou * (1.0 - giou(tuple(gb_norm[i]), tuple(pb_norm[j])))
                + w_l1 * np.abs(gb_norm[i] - pb_norm[j]).sum()
            )
    assignment = _solve_assignment(cost)
    pairs = [(i, j) for i, j in enumerate(assignment)]
    total = float(sum(cost[i, j] for i, j in pairs))
    matched = {j for _, j in pairs}
    return MatchResult(
        pairs=pairs,
        total_cost=total,
        unmatched_predictions=[j for j in range(n_pred) if j not in matched],
    )


def _solve_assignment(cost: np.ndarray) -> list[int]:
    """Shortest-augmenting-path assignment (Jonker-Volgenant style) on a
    dense rows <= cols cost matrix.  Returns the column for each row."""
    n, m = cost.shape
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.int64)  # match[j] = 1-based row on column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    out = [0] * n
    for j in range(1, m + 1):
        if match[j]:
            out[match[j] - 1] = j - 1
    return out
