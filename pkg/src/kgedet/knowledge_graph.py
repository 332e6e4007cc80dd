"""Typed knowledge graphs, class taxonomies, and WUP-based categorization.

Graphs arrive as tab-separated edge lists (``source<TAB>relation<TAB>target
<TAB>weight``, UTF-8, ``#`` comments).  A taxonomy is the same format
restricted to ``isa`` edges and must form a strict tree; node depth is
counted from 1 at the root, since WUP similarity depends on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence


@dataclass(frozen=True)
class Edge:
    source: str
    relation: str
    target: str
    weight: float = 1.0


@dataclass
class KnowledgeGraph:
    """Heterogeneous weighted multigraph over string node identifiers."""

    nodes: list[str]
    edges: list[Edge]
    node_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("node identifiers must be unique")
        self.node_index = {n: i for i, n in enumerate(self.nodes)}
        for e in self.edges:
            if e.source not in self.node_index or e.target not in self.node_index:
                raise ValueError(f"edge endpoint missing from node set: {e}")
            if e.weight < 0:
                raise ValueError(f"negative edge weight: {e}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def _parse_edge_lines(lines: Iterable[str], origin: str) -> list[Edge]:
    edges = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(
                f"{origin}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
            )
        source, relation, target, weight_text = parts
        try:
            weight = float(weight_text)
        except ValueError:
            raise ValueError(f"{origin}:{lineno}: bad weight {weight_text!r}") from None
        if weight < 0:
            raise ValueError(f"{origin}:{lineno}: negative weight {weight}")
        edges.append(Edge(source, relation, target, weight))
    return edges


def load_graph(path, strict_nodes: Sequence[str] | None = None) -> KnowledgeGraph:
    """Parse an edge-list file into a graph.

    Nodes are collected from edge endpoints in first-appearance order.  When
    ``strict_nodes`` is given, the node set is fixed to it and any edge
    endpoint outside the set is an error.
    """
    with open(path, encoding="utf-8") as fh:
        edges = _parse_edge_lines(fh, str(path))
    if strict_nodes is not None:
        nodes = list(strict_nodes)
        known = set(nodes)
        for e in edges:
            for endpoint in (e.source, e.target):
                if endpoint not in known:
                    raise ValueError(f"unknown node {endpoint!r} in strict mode")
    else:
        nodes = []
        seen = set()
        for e in edges:
            for endpoint in (e.source, e.target):
                if endpoint not in seen:
                    seen.add(endpoint)
                    nodes.append(endpoint)
    return KnowledgeGraph(nodes=nodes, edges=edges)


@dataclass
class Taxonomy:
    """Rooted strict tree with depth 1 at the root."""

    parent: dict[str, str]
    root: str
    depth: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        depth = {self.root: 1}
        for node in self.parent:
            chain = []
            cursor = node
            while cursor not in depth:
                chain.append(cursor)
                if cursor not in self.parent:
                    raise ValueError(f"node {cursor!r} is disconnected from the root")
                cursor = self.parent[cursor]
                if cursor in chain:
                    raise ValueError(f"taxonomy contains a cycle through {cursor!r}")
            base = depth[cursor]
            for offset, n in enumerate(reversed(chain), start=1):
                depth[n] = base + offset
        self.depth = depth

    @property
    def nodes(self) -> list[str]:
        return list(self.depth)

    def __contains__(self, node: str) -> bool:
        return node in self.depth

    def _require(self, node: str) -> None:
        if node not in self.depth:
            raise ValueError(f"node {node!r} not in taxonomy")

    def ancestors_or_self(self, node: str) -> list[str]:
        self._require(node)
        chain = [node]
        while chain[-1] != self.root:
            chain.append(self.parent[chain[-1]])
        return chain


def taxonomy_from_edges(edges: Iterable[Edge]) -> Taxonomy:
    """Build a taxonomy from ``child isa parent`` edges.

    Rejects multiple parents per child; the root is auto-detected as the
    unique node that never appears as a child.
    """
    parent: dict[str, str] = {}
    nodes = set()
    for e in edges:
        if e.relation != "isa":
            raise ValueError(f"taxonomy edges must use relation 'isa', got {e.relation!r}")
        if e.source in parent and parent[e.source] != e.target:
            raise ValueError(f"node {e.source!r} has multiple parents")
        parent[e.source] = e.target
        nodes.update((e.source, e.target))
    roots = sorted(nodes - set(parent))
    if len(roots) != 1:
        raise ValueError(f"taxonomy must have exactly one root, found {roots}")
    return Taxonomy(parent=parent, root=roots[0])


def load_taxonomy(path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        return taxonomy_from_edges(_parse_edge_lines(fh, str(path)))


def lowest_common_ancestor(taxonomy: Taxonomy, a: str, b: str) -> str:
    """Deepest node that is an ancestor-or-self of both a and b."""
    ancestors_a = set(taxonomy.ancestors_or_self(a))
    for node in taxonomy.ancestors_or_self(b):
        if node in ancestors_a:
            return node
    raise AssertionError("rooted tree always has a common ancestor")


def wup_similarity(taxonomy: Taxonomy, a: str, b: str) -> float:
    """2*depth(lca) / (depth(a) + depth(b)), in (0, 1]; 1 iff a == b."""
    lca = lowest_common_ancestor(taxonomy, a, b)
    return 2.0 * taxonomy.depth[lca] / (taxonomy.depth[a] + taxonomy.depth[b])


@dataclass(frozen=True)
class CategoryMap:
    """Total class -> category assignment."""

    assignment: dict[str, str]

    @property
    def categories(self) -> list[str]:
        seen: dict[str, None] = {}
        for cat in self.assignment.values():
            seen.setdefault(cat)
        return list(seen)

    def __getitem__(self, cls: str) -> str:
        return self.assignment[cls]

    def __contains__(self, cls: str) -> bool:
        return cls in self.assignment

    def to_json(self) -> dict[str, str]:
        return dict(self.assignment)

    @classmethod
    def from_json(cls, mapping: dict[str, str]) -> "CategoryMap":
        if not mapping:
            raise ValueError("category map must not be empty")
        return cls(assignment={str(k): str(v) for k, v in mapping.items()})


def categorize(
    taxonomy: Taxonomy, classes: Sequence[str], threshold: float = 0.6
) -> CategoryMap:
    """Group classes into categories by single-linkage WUP clustering.

    Two classes join the same category when a chain of pairwise WUP
    similarities >= ``threshold`` connects them.  Each category is named by
    the lowest common ancestor of its members (suffixed on the rare name
    collision between distinct clusters).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    if not classes:
        raise ValueError("no classes to categorize")
    for cls in classes:
        taxonomy._require(cls)

    parent = list(range(len(classes)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(classes)):
        for j in range(i + 1, len(classes)):
            if wup_similarity(taxonomy, classes[i], classes[j]) >= threshold:
                parent[find(i)] = find(j)

    clusters: dict[int, list[str]] = {}
    for i, cls in enumerate(classes):
        clusters.setdefault(find(i), []).append(cls)

    assignment: dict[str, str] = {}
    used: dict[str, int] = {}
    # iterate clusters in order of their first member for deterministic names
    for members in sorted(clusters.values(), key=lambda m: classes.index(m[0])):
        name = members[0]
        for cls in members[1:]:
            name = lowest_common_ancestor(taxonomy, name, cls)
        count = used.get(name, 0)
        used[name] = count + 1
        if count:
            name = f"{name}#{count + 1}"
        for cls in members:
            assignment[cls] = name
    return CategoryMap(assignment=assignment)
