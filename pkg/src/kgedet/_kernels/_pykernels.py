"""Pure numpy implementations of the hot kernels.

Used when the compiled extension (``kgedet._kernels._core``) is unavailable
or disabled.  Inputs are assumed validated by the dispatch layer: float64,
C-contiguous, matching dimensions.
"""

from __future__ import annotations

import numpy as np


def manhattan_distances(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    n = queries.shape[0]
    c = prototypes.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    for j in range(c):
        out[:, j] = np.abs(queries - prototypes[j]).sum(axis=1)
    return out


def lk_distances(queries: np.ndarray, prototypes: np.ndarray, k: float) -> np.ndarray:
    if k == 1.0:
        return manhattan_distances(queries, prototypes)
    n = queries.shape[0]
    c = prototypes.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    for j in range(c):
        out[:, j] = (np.abs(queries - prototypes[j]) ** k).sum(axis=1) ** (1.0 / k)
    return out


def cosine_distances(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    pn = prototypes / np.linalg.norm(prototypes, axis=1, keepdims=True)
    d = 1.0 - qn @ pn.T
    # cosine distance is [0, 2] exactly; rounding can overshoot by ~1 ulp
    np.clip(d, 0.0, 2.0, out=d)
    return d


def weighted_sign_sum(
    queries: np.ndarray, prototypes: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    out = np.zeros_like(queries)
    for j in range(prototypes.shape[0]):
        out += weights[:, j : j + 1] * np.sign(queries - prototypes[j])
    return out


def local_minima8(field: np.ndarray, threshold: float) -> np.ndarray:
    h, w = field.shape
    padded = np.full((h + 2, w + 2), np.inf)
    padded[1:-1, 1:-1] = field
    keep = np.ones((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            # a tie survives only against neighbors that come later in
            # raster order, so exactly one pixel of a tied plateau is kept
            neighbor_is_later = dy > 0 or (dy == 0 and dx > 0)
            if neighbor_is_later:
                keep &= field <= nb
            else:
                keep &= field < nb
    keep &= field < threshold
    return np.argwhere(keep).astype(np.int64)
