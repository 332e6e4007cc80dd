"""Construction of fixed class-prototype matrices.

Prototypes come from three sources: positive pointwise mutual information of
a knowledge graph's collapsed adjacency followed by truncated SVD, rows
selected from a pretrained word-embedding table, or a random orthonormal
control set.  A fourth provenance, ``learned-baseline``, marks prototype
matrices that are trained as ordinary classifier weights.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import geometry
from .boxes import AnnotatedBox, box_area, group_by_image, intersection_area, iou
from .errors import NumericError
from .knowledge_graph import Edge, KnowledgeGraph

PROVENANCES = ("glove", "ppmi-svd", "learned-baseline", "random-orthogonal")


@dataclass(frozen=True)
class ExplicitBackground:
    """Background is a dedicated vector competing in the nearest-neighbor
    argmax as class 0."""

    vector: np.ndarray

    def to_json(self) -> dict:
        return {"policy": "explicit", "vector": [float(v) for v in self.vector]}


@dataclass(frozen=True)
class ImplicitBackground:
    """Background fires when the best foreground similarity falls below
    ``threshold``; there is no background vector."""

    threshold: float = 0.55

    def to_json(self) -> dict:
        return {"policy": "implicit", "threshold": self.threshold}


BackgroundPolicy = ExplicitBackground | ImplicitBackground


def _policy_from_json(obj: dict) -> BackgroundPolicy:
    if obj["policy"] == "explicit":
        return ExplicitBackground(vector=np.asarray(obj["vector"], dtype=np.float64))
    if obj["policy"] == "implicit":
        return ImplicitBackground(threshold=float(obj["threshold"]))
    raise ValueError(f"unknown background policy {obj['policy']!r}")


@dataclass
class PrototypeSet:
    """Ordered class names plus their fixed embedding rows.

    Class ids are 1-based: class c corresponds to ``matrix[c - 1]``; id 0 is
    reserved for background.
    """

    classes: list[str]
    matrix: np.ndarray
    background_policy: BackgroundPolicy = field(default_factory=ImplicitBackground)
    provenance: str = "ppmi-svd"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if len(self.classes) < 1:
            raise ValueError("a prototype set needs at least one class")
        if self.matrix.shape[0] != len(self.classes):
            raise ValueError("one matrix row per class required")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("prototype rows must be finite")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if isinstance(self.background_policy, ExplicitBackground):
            if self.background_policy.vector.shape != (self.matrix.shape[1],):
                raise ValueError("background vector length must equal the embedding dim")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def class_id(self, name: str) -> int:
        return self.classes.index(name) + 1

    def projected_matrix(self, metric: str) -> np.ndarray:
        """Rows projected into the unit ball for the Manhattan metric
        (projection is idempotent, so pre-projected rows pass through)."""
        if metric == "manhattan":
            return geometry.project_unit_sphere(self.matrix)
        return self.matrix

    def to_json(self) -> dict:
        return {
            "classes": list(self.classes),
            "dim": self.dim,
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "background_policy": self.background_policy.to_json(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PrototypeSet":
        matrix = np.asarray(obj["matrix"], dtype=np.float64)
        if matrix.shape != (len(obj["classes"]), int(obj["dim"])):
            raise ValueError("matrix shape disagrees with classes/dim")
        return cls(
            classes=list(obj["classes"]),
            matrix=matrix,
            background_policy=_policy_from_json(obj["background_policy"]),
            provenance=obj["provenance"],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PrototypeSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def mean_background(matrix: np.ndarray) -> ExplicitBackground:
    """The conventional explicit background: the mean of all class rows."""
    return ExplicitBackground(vector=np.asarray(matrix, dtype=np.float64).mean(axis=0))


# ---------------------------------------------------------------------------
# PPMI + truncated SVD pipeline


def ppmi_matrix(
    graph: KnowledgeGraph, relation_weights: Mapping[str, float] | None = None
) -> np.ndarray:
    """Positive PMI of the relation-collapsed, symmetrized adjacency.

    Typed edges are folded into one weighted adjacency A with
    ``A[i, j] += w_rel * edge_weight`` (both directions).  Entries are
    ``max(0, log(A_ij * S / (r_i * c_j)))`` with S the total mass and r/c
    the row/column sums; zero-mass rows and columns stay zero, so an
    edgeless graph yields the zero matrix.
    """
    if graph.n_nodes == 0:
        raise ValueError("graph has no nodes")
    weights = dict(relation_weights or {})
    for rel, w in weights.items():
        if w < 0:
            raise ValueError(f"negative relation weight for {rel!r}")
    n = graph.n_nodes
    adjacency = np.zeros((n, n), dtype=np.float64)
    for e in graph.edges:
        w = weights.get(e.relation, 1.0) * e.weight
        i = graph.node_index[e.source]
        j = graph.node_index[e.target]
        adjacency[i, j] += w
        if i != j:
            adjacency[j, i] += w
    total = adjacency.sum()
    if total == 0.0:
        return np.zeros((n, n), dtype=np.float64)
    row = adjacency.sum(axis=1)
    col = adjacency.sum(axis=0)
    out = np.zeros_like(adjacency)
    mask = adjacency > 0.0
    expected = np.outer(row, col)
    out[mask] = np.log(adjacency[mask] * total / expected[mask])
    np.maximum(out, 0.0, out=out)
    return out


@dataclass(frozen=True)
class TruncatedSVD:
    """Scaled factors of the best rank-k approximation.

    ``u_factor = U_k sqrt(S_k)`` and ``v_factor = V_k sqrt(S_k)``, so the
    reconstruction is ``u_factor @ v_factor.T``.  ``u_factor`` rows are the
    node embeddings.
    """

    u_factor: np.ndarray
    v_factor: np.ndarray
    singular_values: np.ndarray

    def reconstruction(self) -> np.ndarray:
        return self.u_factor @ self.v_factor.T


def truncated_svd(
    matrix,
    k: int,
    tol: float = 1e-10,
    max_iterations: int = 10000,
    seed: int = 0,
) -> TruncatedSVD:
    """Top-k singular triplets by alternating power iteration with
    Hotelling deflation.

    Convergence is declared when the singular-value estimate changes by
    less than ``tol`` between sweeps; exceeding ``max_iterations`` raises
    NumericError.  If the numerical rank is below k the trailing components
    are zero-padded and a warning is emitted.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("matrix must be 2-D")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix must be finite")
    rows, cols = m.shape
    if k < 1 or k > min(rows, cols):
        raise ValueError(f"k must be in [1, {min(rows, cols)}], got {k}")

    rng = np.random.default_rng(seed)
    work = m.copy()
    scale = np.linalg.norm(m)
    rank_floor = max(scale, 1.0) * 1e-13
    us = np.zeros((rows, k))
    vs = np.zeros((cols, k))
    sigmas = np.zeros(k)
    effective_rank = k
    for comp in range(k):
        v = rng.standard_normal(cols)
        # start orthogonal to converged components; cheap insurance against
        # re-extracting a deflated direction
        if comp:
            v -= vs[:, :comp] @ (vs[:, :comp].T @ v)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v = np.ones(cols)
            norm = np.linalg.norm(v)
        v /= norm
        sigma_prev = np.inf
        sigma = 0.0
        u = np.zeros(rows)
        for iteration in range(max_iterations):
            u_raw = work @ v
            u_norm = np.linalg.norm(u_raw)
            if u_norm <= rank_floor:
                sigma = 0.0
                break
            u = u_raw / u_norm
            v_raw = work.T @ u
            sigma = np.linalg.norm(v_raw)
            if sigma <= rank_floor:
                sigma = 0.0
                break
            v = v_raw / sigma
            if abs(sigma - sigma_prev) < tol:
                break
            sigma_prev = sigma
        else:
            raise NumericError(
                f"power iteration did not converge for component {comp} "
                f"within {max_iterations} iterations"
            )
        if sigma == 0.0:
            effective_rank = comp
            break
        us[:, comp] = u
        vs[:, comp] = v
        sigmas[comp] = sigma
        work -= sigma * np.outer(u, v)
    if effective_rank < k:
        warnings.warn(
            f"matrix rank {effective_rank} below requested k={k}; "
            "trailing dimensions zero-padded",
            stacklevel=2,
        )
    root = np.sqrt(sigmas)
    return TruncatedSVD(
        u_factor=us * root, v_factor=vs * root, singular_values=sigmas
    )


def build_graph_prototypes(
    graph: KnowledgeGraph,
    classes: Sequence[str],
    dim: int,
    relation_weights: Mapping[str, float] | None = None,
    background_policy: BackgroundPolicy | None = None,
) -> PrototypeSet:
    """PPMI + truncated SVD node embeddings, selected at the class nodes."""
    missing = [c for c in classes if c not in graph.node_index]
    if missing:
        raise ValueError(f"classes missing from graph: {missing}")
    ppmi = ppmi_matrix(graph, relation_weights)
    factors = truncated_svd(ppmi, dim)
    matrix = factors.u_factor[[graph.node_index[c] for c in classes]]
    zero_rows = [c for c, row in zip(classes, matrix) if not row.any()]
    if zero_rows:
        warnings.warn(f"zero prototype rows (disconnected nodes): {zero_rows}", stacklevel=2)
    return PrototypeSet(
        classes=list(classes),
        matrix=matrix,
        background_policy=background_policy or ImplicitBackground(),
        provenance="ppmi-svd",
    )


# ---------------------------------------------------------------------------
# Spatial co-occurrence graph

RELATIONS = ("touches", "above", "besides", "holds", "on")


@dataclass(frozen=True)
class RelationRules:
    """Geometric thresholds for pairwise spatial relations.

    y grows downward, so box A sits visually above B when A's bottom edge
    (ymax) is smaller than B's top edge (ymin).  The ``on`` tolerance is
    relative to the supporting box's height.
    """

    on_epsilon: float = 0.05
    holds_containment: float = 0.9
    holds_area_ratio: float = 0.25


def _x_overlap(a, b) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0])


def _y_overlap(a, b) -> bool:
    return min(a[3], b[3]) > max(a[1], b[1])


def _pair_relations(a, b, rules: RelationRules) -> list[tuple[str, bool]]:
    """Relations for the ordered pair (a, b); bool marks symmetric ones."""
    found = []
    if iou(a, b) > 0.0:
        found.append(("touches", True))
    if a[3] < b[1] and _x_overlap(a, b):
        found.append(("above", False))
    if _y_overlap(a, b) and not _x_overlap(a, b):
        found.append(("besides", True))
    if abs(a[3] - b[1]) <= rules.on_epsilon * (b[3] - b[1]) and _x_overlap(a, b):
        found.append(("on", False))
    inter = intersection_area(a, b)
    if (
        box_area(b) > 0
        and inter >= rules.holds_containment * box_area(b)
        and box_area(b) < rules.holds_area_ratio * box_area(a)
    ):
        found.append(("holds", False))
    return found


def build_cooccurrence_graph(
    groundtruth: Sequence[AnnotatedBox],
    relations: Sequence[str] = RELATIONS,
    rules: RelationRules = RelationRules(),
) -> KnowledgeGraph:
    """Count spatial relations between intra-image box pairs.

    Nodes are class labels; edge weights are occurrence counts over the
    dataset.  Symmetric relations (touches, besides) are emitted once per
    unordered pair with lexicographically sorted endpoints, so edge weights
    are invariant to image and box ordering.
    """
    unknown = set(relations) - set(RELATIONS)
    if unknown:
        raise ValueError(f"unknown relations: {sorted(unknown)}")
    wanted = set(relations)
    counts: dict[tuple[str, str, str], float] = {}
    labels = sorted({b.label for b in groundtruth})
    for image_boxes in group_by_image(groundtruth).values():
        for i in range(len(image_boxes)):
            for j in range(len(image_boxes)):
                if i == j:
                    continue
                a, b = image_boxes[i], image_boxes[j]
                for rel, symmetric in _pair_relations(a.box, b.box, rules):
                    if rel not in wanted:
                        continue
                    if symmetric:
                        if i > j:
                            continue  # unordered pair, count once
                        key = (rel, *sorted((a.label, b.label)))
                    else:
                        key = (rel, a.label, b.label)
                    counts[key] = counts.get(key, 0.0) + 1.0
    edges = [
        Edge(source=src, relation=rel, target=tgt, weight=w)
        for (rel, src, tgt), w in sorted(counts.items())
    ]
    return KnowledgeGraph(nodes=labels, edges=edges)


# ---------------------------------------------------------------------------
# Word-embedding tables


@dataclass
class EmbeddingTable:
    dim: int
    rows: dict[str, np.ndarray]


def load_embedding_table(path) -> EmbeddingTable:
    """Parse ``name v1 v2 ... vD`` lines (space separated, consistent D)."""
    rows: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            name = parts[0]
            try:
                vector = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: unparseable vector entry") from None
            if not np.all(np.isfinite(vector)):
                raise ValueError(f"{path}:{lineno}: non-finite vector entry")
            if dim is None:
                dim = vector.size
                if dim == 0:
                    raise ValueError(f"{path}:{lineno}: row has no vector entries")
            elif vector.size != dim:
                raise ValueError(
                    f"{path}:{lineno}: dimension {vector.size} != expected {dim}"
                )
            if name in rows:
                raise ValueError(f"{path}:{lineno}: duplicate name {name!r}")
            rows[name] = vector
    if dim is None:
        raise ValueError(f"{path}: empty embedding table")
    return EmbeddingTable(dim=dim, rows=rows)


def select_prototypes(
    table: EmbeddingTable,
    classes: Sequence[str],
    aliases: Mapping[str, str] | None = None,
    background_policy: BackgroundPolicy | None = None,
) -> PrototypeSet:
    """Pick class rows from a table; ``aliases`` maps class names that are
    spelled differently in the table (e.g. multiword class names)."""
    aliases = dict(aliases or {})
    matrix = np.zeros((len(classes), table.dim), dtype=np.float64)
    for i, cls in enumerate(classes):
        key = aliases.get(cls, cls)
        if key not in table.rows:
            raise ValueError(f"class {cls!r} (table key {key!r}) not in embedding table")
        matrix[i] = table.rows[key]
    return PrototypeSet(
        classes=list(classes),
        matrix=matrix,
        background_policy=background_policy or ImplicitBackground(),
        provenance="glove",
    )


# ---------------------------------------------------------------------------
# Analysis and controls


def pairwise_distance_matrix(prototypes: PrototypeSet, metric: str) -> np.ndarray:
    """Symmetric C x C prototype distance matrix with an exactly zero
    diagonal.  Manhattan rows are unit-ball projected first."""
    rows = prototypes.projected_matrix(metric)
    d = geometry.distance_matrix(rows, rows, metric)
    np.fill_diagonal(d, 0.0)
    return d


def distance_matrix_csv(classes: Sequence[str], matrix: np.ndarray) -> str:
    """CSV rendering with class names as header row and column."""
    lines = ["class," + ",".join(classes)]
    for name, row in zip(classes, matrix):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def random_orthogonal_prototypes(
    n_classes: int,
    dim: int,
    seed: int,
    classes: Sequence[str] | None = None,
    background_policy: BackgroundPolicy | None = None,
) -> PrototypeSet:
    """Pairwise-orthonormal prototype rows; the one-hot-style control for
    error-distribution comparisons.  Requires n_classes <= dim."""
    if n_classes > dim:
        raise ValueError(f"cannot fit {n_classes} orthonormal rows in {dim} dimensions")
    if classes is not None and len(classes) != n_classes:
        raise ValueError("classes length must equal n_classes")
    rng = np.random.default_rng(seed)
    gaussian = rng.standard_normal((dim, n_classes))
    q, r = np.linalg.qr(gaussian)
    q = q * np.sign(np.diag(r))  # fix the sign convention for determinism
    return PrototypeSet(
        classes=list(classes) if classes else [f"class_{i + 1}" for i in range(n_classes)],
        matrix=q.T.copy(),
        background_policy=background_policy or ImplicitBackground(),
        provenance="random-orthogonal",
    )
