"""Kernel backend selection.

The numeric hot paths (pairwise distance fields, Manhattan similarity
backprop, 8-connected minima search) exist twice: a Cython extension
(``_core``) and a numpy fallback (``_pykernels``).  The compiled core is
preferred when importable; set ``KGEDET_FORCE_PYTHON=1`` to force the
fallback.  ``benchmarks/bench_kernels.py`` compares the two.

This module owns input validation so both backends can assume clean
float64 C-contiguous arrays.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
_BACKEND = "python"
if not os.environ.get("KGEDET_FORCE_PYTHON"):
    try:
        from . import _core as _compiled

        _impl = _compiled
        _BACKEND = "compiled"
    except ImportError:
        pass


def active_backend() -> str:
    """Name of the kernel backend in use: ``compiled`` or ``python``."""
    return _BACKEND


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a vector or a 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _pair(queries, prototypes) -> tuple[np.ndarray, np.ndarray]:
    q = _as_matrix(queries, "queries")
    p = _as_matrix(prototypes, "prototypes")
    if q.shape[1] != p.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries have {q.shape[1]} entries, "
            f"prototypes have {p.shape[1]}"
        )
    return q, p


def manhattan_distances(queries, prototypes) -> np.ndarray:
    """Pairwise L1 distances, shape (n_queries, n_prototypes)."""
    q, p = _pair(queries, prototypes)
    return _impl.manhattan_distances(q, p)


def lk_distances(queries, prototypes, k: float) -> np.ndarray:
    """Pairwise Lk distances for k > 0, shape (n_queries, n_prototypes).

    k=1 and k=2 take the compiled fast path; other exponents go through
    numpy, whose vectorized pow beats a scalar libm loop.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    q, p = _pair(queries, prototypes)
    if k in (1.0, 2.0):
        return _impl.lk_distances(q, p, float(k))
    return _pykernels.lk_distances(q, p, float(k))


def cosine_distances(queries, prototypes) -> np.ndarray:
    """Pairwise cosine distances 1 - cos(angle), shape (n, c), in [0, 2].

    Always served by the numpy implementation: the work is one BLAS matmul,
    which no hand-written loop improves on.
    """
    q, p = _pair(queries, prototypes)
    if np.any(np.linalg.norm(q, axis=1) == 0.0):
        raise ValueError("cosine distance undefined for zero-norm query")
    if np.any(np.linalg.norm(p, axis=1) == 0.0):
        raise ValueError("cosine distance undefined for zero-norm prototype")
    return _pykernels.cosine_distances(q, p)


def weighted_sign_sum(queries, prototypes, weights) -> np.ndarray:
    """out[n] = sum_c weights[n, c] * sign(queries[n] - prototypes[c]).

    The L1-metric similarity backprop kernel: contracts per-class weight
    matrices against elementwise sign patterns without materialising the
    (n, c, dim) intermediate.
    """
    q, p = _pair(queries, prototypes)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.shape != (q.shape[0], p.shape[0]):
        raise ValueError(f"weights shape {w.shape} != {(q.shape[0], p.shape[0])}")
    return _impl.weighted_sign_sum(q, p, w)


def local_minima8(field, threshold: float) -> np.ndarray:
    """(row, col) indices of 8-connected local minima below ``threshold``.

    A pixel survives if it is <= every neighbor, where equality is only
    allowed against neighbors later in raster order (deterministic
    plateau tie-break).  Returned in raster order, shape (m, 2), int64.
    """
    f = np.ascontiguousarray(field, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise ValueError("field must be a non-empty 2-D array")
    return _impl.local_minima8(f, float(threshold))
