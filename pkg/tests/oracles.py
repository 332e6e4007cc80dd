"""Independent reference implementations used only by the tests.

These deliberately avoid the package's own code paths: the SVD oracle is a
one-sided Jacobi iteration, the assignment oracle enumerates permutations,
and the distance/AP/clustering oracles are direct transcriptions of the
definitions with plain Python loops.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def jacobi_svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD by one-sided Jacobi rotations; returns (u, sigma, vt) with
    singular values sorted descending."""
    a = np.array(matrix, dtype=np.float64)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    m, n = a.shape
    u = a.copy()
    v = np.eye(n)
    for _ in range(100):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = u[:, p] @ u[:, p]
                aqq = u[:, q] @ u[:, q]
                apq = u[:, p] @ u[:, q]
                if abs(apq) <= 1e-14 * math.sqrt(app * aqq) or apq == 0.0:
                    continue
                off = max(off, abs(apq) / math.sqrt(app * aqq))
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                up, uq = u[:, p].copy(), u[:, q].copy()
                u[:, p] = c * up - s * uq
                u[:, q] = s * up + c * uq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if off < 1e-14:
            break
    sigma = np.linalg.norm(u, axis=0)
    order = np.argsort(-sigma)
    sigma = sigma[order]
    v = v[:, order]
    u = u[:, order]
    nonzero = sigma > 1e-300
    u[:, nonzero] = u[:, nonzero] / sigma[nonzero]
    if transposed:
        return v, sigma, u.T
    return u, sigma, v.T


def best_rank_k_error(matrix: np.ndarray, k: int) -> float:
    """Frobenius error of the optimal rank-k approximation (tail of the
    Jacobi spectrum)."""
    _, sigma, _ = jacobi_svd(matrix)
    return float(math.sqrt(max((sigma[k:] ** 2).sum(), 0.0)))


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum assignment cost of rows to distinct columns by enumeration."""
    n, m = cost.shape
    best = math.inf
    for perm in itertools.permutations(range(m), n):
        total = sum(cost[i, j] for i, j in enumerate(perm))
        best = min(best, total)
    return best


def loop_distance_matrix(rows_a, rows_b, metric: str) -> np.ndarray:
    """Naive per-element distance matrix from scalar definitions."""
    a = np.asarray(rows_a, float)
    b = np.asarray(rows_b, float)
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            if metric == "manhattan":
                out[i, j] = sum(abs(x - y) for x, y in zip(a[i], b[j]))
            else:
                na = math.sqrt(sum(x * x for x in a[i]))
                nb = math.sqrt(sum(y * y for y in b[j]))
                out[i, j] = 1.0 - sum(x * y for x, y in zip(a[i], b[j])) / (na * nb)
    return out


def single_linkage_partition(similarity: np.ndarray, threshold: float) -> list[set[int]]:
    """Connected components of the >= threshold similarity graph (which is
    exactly single-linkage clustering at that cut)."""
    n = similarity.shape[0]
    unvisited = set(range(n))
    parts = []
    while unvisited:
        seed = min(unvisited)
        component = {seed}
        frontier = [seed]
        unvisited.discard(seed)
        while frontier:
            node = frontier.pop()
            for other in list(unvisited):
                if similarity[node, other] >= threshold:
                    component.add(other)
                    unvisited.discard(other)
                    frontier.append(other)
        parts.append(component)
    return parts


def envelope_average_precision(tp_flags: list[int], n_gt: int) -> float:
    """101-point interpolated AP from an ordered TP/FP flag list."""
    tp = 0
    points = []
    for rank, flag in enumerate(tp_flags, start=1):
        tp += flag
        points.append((tp / n_gt, tp / rank))
    best = 0.0
    total = 0.0
    for r in [i / 100.0 for i in range(101)]:
        best = max((p for rec, p in points if rec >= r), default=0.0)
        total += best
    return total / 101.0


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation (average ranks are unnecessary here: the
    compared values are distinct in every fixture)."""
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float((ra * rb).sum() / math.sqrt((ra * ra).sum() * (rb * rb).sum()))
