"""Embedding-space primitives: unit-ball projection, distance metrics,
similarity, batch standardization, and hubness statistics.

Two metrics are supported throughout the package.  ``cosine`` is defined for
any nonzero vectors and is bounded by [0, 2].  ``manhattan`` is the L1 norm
of the difference vector; the similarity mapping ``1 - d/2`` is only applied
after both vectors have been projected into the unit L2 ball, which callers
must guarantee (``similarity`` checks).  Note that even inside the unit ball
the L1 distance can reach 2*sqrt(dim), so Manhattan similarities may leave
[0, 1] in high dimensions; the cosine bound is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

Metric = str  # "cosine" | "manhattan"

_UNIT_BALL_SLACK = 1e-9


def _check_metric(metric: str) -> None:
    if metric not in ("cosine", "manhattan"):
        raise ValueError(f"unknown metric {metric!r}; expected cosine or manhattan")


def project_unit_sphere(x) -> np.ndarray:
    """x / max(1, ||x||_2): identity inside the closed unit ball, radial
    shrink outside.  Idempotent. Accepts a vector or a batch of row vectors."""
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("input contains non-finite entries")
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / np.maximum(1.0, norm)


def lk_distance(a, b, k: float = 1.0) -> float:
    """(sum_d |a_d - b_d|^k)^(1/k).  k=1 is the Manhattan default used for
    nearest-neighbor classification; k=2 is Euclidean."""
    d = _kernels.lk_distances(np.atleast_2d(a), np.atleast_2d(b), k)
    return float(d[0, 0])


def cosine_distance(a, b) -> float:
    """1 - cos(angle between a and b), in [0, 2].  Errors on zero-norm input."""
    d = _kernels.cosine_distances(np.atleast_2d(a), np.atleast_2d(b))
    return float(d[0, 0])


def distance_matrix(queries, prototypes, metric: Metric, k: float = 1.0) -> np.ndarray:
    """Pairwise distances, shape (n_queries, n_prototypes)."""
    _check_metric(metric)
    if metric == "cosine":
        return _kernels.cosine_distances(queries, prototypes)
    return _kernels.lk_distances(queries, prototypes, k)


def _require_unit_ball(x: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(x, axis=-1)
    worst = float(np.max(norms)) if norms.size else 0.0
    if worst > 1.0 + _UNIT_BALL_SLACK:
        raise ValueError(
            f"{name} must lie in the unit L2 ball for Manhattan similarity "
            f"(max norm {worst:.6g}); apply project_unit_sphere first"
        )


def similarity_matrix(queries, prototypes, metric: Metric) -> np.ndarray:
    """1 - d/2 for every query/prototype pair, shape (n, c).

    For the Manhattan metric both sides must be inside the unit ball.
    """
    _check_metric(metric)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    if metric == "manhattan":
        _require_unit_ball(q, "queries")
        _require_unit_ball(p, "prototypes")
    return 1.0 - distance_matrix(q, p, metric) / 2.0


def similarity(a, b, metric: Metric = "cosine") -> float:
    """Negated-distance similarity 1 - d(a, b)/2.

    Cosine similarity equals (1 + cos(angle))/2 and lies in [0, 1].
    """
    return float(similarity_matrix(a, b, metric)[0, 0])


def distance_gradient(b, t, metric: Metric) -> np.ndarray:
    """d d(b, t) / d b for a single pair.

    Manhattan uses the sign subgradient (0 on coordinate ties); cosine is
    smooth away from zero-norm inputs.
    """
    _check_metric(metric)
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if metric == "manhattan":
        return np.sign(b - t)
    bn = np.linalg.norm(b)
    tn = np.linalg.norm(t)
    if bn == 0.0 or tn == 0.0:
        raise ValueError("cosine distance undefined for zero-norm input")
    cos = float(b @ t) / (bn * tn)
    return -(t / tn - cos * b / bn) / bn


def similarity_backprop(queries, prototypes, weights, metric: Metric) -> np.ndarray:
    """Contract per-pair loss sensitivities into query-space gradients.

    Given weights[n, c] = dL/d sim(q_n, t_c), returns dL/d q_n (shape (n, dim))
    through sim = 1 - d/2.  This is the backward pass shared by every
    embedding loss; the Manhattan branch is the compiled hot path.
    """
    _check_metric(metric)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if metric == "manhattan":
        return -0.5 * _kernels.weighted_sign_sum(q, p, w)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    if np.any(qn == 0.0) or np.any(pn == 0.0):
        raise ValueError("cosine distance undefined for zero-norm input")
    cos = (q / qn) @ (p / pn).T
    # d sim / d q = (1/2) * (t_hat / |q| - cos * q / |q|^2), summed with weights
    term_proto = (w @ (p / pn)) / qn
    term_radial = (w * cos).sum(axis=1, keepdims=True) * q / qn**2
    return 0.5 * (term_proto - term_radial)


def zscore_standardize(vectors) -> np.ndarray:
    """Per-dimension (x - mean)/std over the batch (population std).

    Zero-variance dimensions map to 0.  Requires at least two vectors.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardization needs a batch of at least 2 vectors")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = np.zeros_like(x)
    nz = std > 0.0
    out[:, nz] = (x[:, nz] - mean[nz]) / std[nz]
    return out


@dataclass(frozen=True)
class HubnessReport:
    """k-occurrence counts of prototypes in query neighbor lists.

    ``k_occurrence[c]`` counts how often prototype c appears among the k
    nearest prototypes of a query; heavily skewed counts indicate hubs.
    """

    k: int
    k_occurrence: np.ndarray
    skewness: float

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "k_occurrence": [int(v) for v in self.k_occurrence],
            "skewness": self.skewness,
        }


def _population_skewness(values: np.ndarray) -> float:
    std = values.std()
    if std == 0.0:
        return 0.0
    return float((((values - values.mean()) / std) ** 3).mean())


def hubness(queries, prototypes, k: int, metric: Metric = "cosine") -> HubnessReport:
    """Count k-nearest-prototype occurrences and their distribution skewness."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    if q.shape[0] == 0:
        raise ValueError("empty query set")
    if k > p.shape[0]:
        raise ValueError(f"k={k} exceeds the number of prototypes {p.shape[0]}")
    d = distance_matrix(q, p, metric)
    # stable sort: distance ties resolve to the lowest prototype index
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    counts = np.bincount(nearest.ravel(), minlength=p.shape[0])
    return HubnessReport(
        k=k, k_occurrence=counts, skewness=_population_skewness(counts.astype(float))
    )
