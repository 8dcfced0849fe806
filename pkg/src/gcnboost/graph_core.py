"""Knowledge graph construction, test-set extension and adjacency normalization.

Nodes are addressed by dense integer ids (their position in ``nodes``).  Artworks
always come first, followed by label nodes in order of first mention.  Every
node also has a stable *key* that survives re-indexing (``filter_low_degree``):
``("artwork", name)`` or ``("label", category_name, value)``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from gcnboost.pipeline import PseudoLabelAssignment

SPLITS = ("train", "validation", "test")
SOURCES = ("train_only", "train_plus_pseudo")

NodeKey = tuple


class GraphError(ValueError):
    """Raised when graph inputs violate a construction rule."""


@dataclass(frozen=True)
class ArtworkNode:
    name: str
    split: str
    feature_ref: int | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise GraphError(f"artwork {self.name!r}: unknown split {self.split!r}")


@dataclass(frozen=True)
class LabelNode:
    category: int
    value: str


Node = Union[ArtworkNode, LabelNode]
LinkEnd = Union[str, tuple]


class _GraphView:
    """Read-only helpers shared by KnowledgeGraph and ExtendedKG."""

    categories: tuple[str, ...]
    nodes: tuple[Node, ...]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def keys(self) -> tuple[NodeKey, ...]:
        out = []
        for node in self.nodes:
            if isinstance(node, ArtworkNode):
                out.append(("artwork", node.name))
            else:
                out.append(("label", self.categories[node.category], node.value))
        return tuple(out)

    @cached_property
    def _index(self) -> dict[NodeKey, int]:
        return {k: i for i, k in enumerate(self.keys)}

    def index_of(self, key: NodeKey) -> int:
        return self._index[key]

    def has_key(self, key: NodeKey) -> bool:
        return key in self._index

    def artwork_id(self, name: str) -> int:
        return self._index[("artwork", name)]

    def label_id(self, category: str | int, value: str) -> int:
        return self._index[("label", self.categories[self.category_index(category)], value)]

    def category_index(self, category: str | int) -> int:
        if isinstance(category, (int, np.integer)):
            if not 0 <= category < len(self.categories):
                raise GraphError(f"unknown category index {category}")
            return int(category)
        try:
            return self.categories.index(category)
        except ValueError:
            raise GraphError(f"unknown category {category!r}") from None

    def label_ids(self, category: str | int) -> list[int]:
        c = self.category_index(category)
        return [i for i, n in enumerate(self.nodes) if isinstance(n, LabelNode) and n.category == c]

    def artwork_ids(self, split: str | None = None) -> list[int]:
        return [
            i
            for i, n in enumerate(self.nodes)
            if isinstance(n, ArtworkNode) and (split is None or n.split == split)
        ]

    @cached_property
    def edge_array(self) -> np.ndarray:
        """All undirected edges as a sorted (m, 2) int array with i < j."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        arr = np.array(sorted(self.edges), dtype=np.int64)
        return arr

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency (no self loops), sorted indices."""
        n = self.num_nodes
        e = self.edge_array
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        a.sort_indices()
        return a

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class KnowledgeGraph(_GraphView):
    categories: tuple[str, ...]
    nodes: tuple[Node, ...]
    assignment_edges: frozenset  # (artwork id, label id)
    label_link_edges: frozenset  # (lo, hi) label ids

    @cached_property
    def edges(self) -> frozenset:
        return frozenset(_edge(a, b) for a, b in self.assignment_edges) | self.label_link_edges


@dataclass(frozen=True)
class ExtendedKG(_GraphView):
    """Knowledge graph plus test artworks wired in through pseudo-label edges."""

    base: KnowledgeGraph
    categories: tuple[str, ...]
    nodes: tuple[Node, ...]
    assignment_edges: frozenset
    label_link_edges: frozenset
    pseudo_edges: frozenset  # (artwork id, label id, category index)
    test_nodes: tuple[int, ...]
    used_categories: tuple[int, ...] = ()

    @cached_property
    def edges(self) -> frozenset:
        out = set(_edge(a, b) for a, b in self.assignment_edges)
        out |= self.label_link_edges
        out |= {_edge(a, b) for a, b, _ in self.pseudo_edges}
        return frozenset(out)

    def base_edge_count(self) -> int:
        return len(self.assignment_edges) + len(self.label_link_edges)

    def pseudo_label_of(self, artwork: int, category: int) -> int | None:
        for a, lab, c in self.pseudo_edges:
            if a == artwork and c == category:
                return lab
        return None


class _LabelTable:
    def __init__(self, categories: list[str], frozen_categories: bool):
        self.categories = categories
        self.frozen = frozen_categories
        self.ids: dict[tuple[int, str], int] = {}
        self.order: list[LabelNode] = []

    def cat(self, name: str) -> int:
        if name in self.categories:
            return self.categories.index(name)
        if self.frozen:
            raise GraphError(f"unknown category {name!r}")
        self.categories.append(name)
        return len(self.categories) - 1

    def get_or_create(self, category: str, value: str) -> int:
        c = self.cat(category)
        key = (c, str(value))
        if key not in self.ids:
            self.ids[key] = len(self.order)
            self.order.append(LabelNode(c, str(value)))
        return self.ids[key]

    def resolve_bare(self, value: str) -> int:
        hits = [i for (c, v), i in self.ids.items() if v == value]
        if not hits:
            raise GraphError(f"label link references unknown label {value!r}")
        if len(hits) > 1:
            raise GraphError(f"label link value {value!r} is ambiguous across categories")
        return hits[0]


def build_kg(
    artworks: Sequence[ArtworkNode],
    assignments: Iterable[tuple[str, str, str]],
    label_links: Iterable[tuple[LinkEnd, LinkEnd]] = (),
    categories: Sequence[str] | None = None,
    labels: Iterable[tuple[str, str]] = (),
) -> KnowledgeGraph:
    """Build the labeled knowledge graph from train/validation artworks.

    ``assignments`` are ``(artwork name, category, value)`` triples.  A label-link
    endpoint is either a ``(category, value)`` pair, which creates the label node
    on first mention, or a bare value string that must already name exactly one
    label node.  ``labels`` pre-declares label nodes (e.g. the dataset's full
    vocabulary) so they exist even without any assignment.
    """
    names: dict[str, int] = {}
    for i, art in enumerate(artworks):
        if art.split == "test":
            raise GraphError(f"artwork {art.name!r} is a test artwork; use extend_kg")
        if art.name in names:
            raise GraphError(f"duplicate artwork {art.name!r}")
        names[art.name] = i

    table = _LabelTable(list(categories or ()), frozen_categories=categories is not None)
    for cat, value in labels:
        table.get_or_create(cat, value)

    chosen: dict[tuple[str, int], str] = {}
    pairs: set[tuple[int, int]] = set()
    for art_name, cat, value in assignments:
        if art_name not in names:
            raise GraphError(f"assignment references undeclared artwork {art_name!r}")
        lab = table.get_or_create(cat, value)
        c = table.cat(cat)
        prev = chosen.get((art_name, c))
        if prev is not None and prev != str(value):
            raise GraphError(
                f"artwork {art_name!r} has conflicting {cat!r} labels {prev!r} and {value!r}"
            )
        chosen[(art_name, c)] = str(value)
        pairs.add((names[art_name], lab))

    link_pairs: set[tuple[int, int]] = set()
    for a, b in label_links:
        ends = []
        for end in (a, b):
            if isinstance(end, str):
                ends.append(table.resolve_bare(end))
            else:
                cat, value = end
                ends.append(table.get_or_create(cat, value))
        if ends[0] == ends[1]:
            raise GraphError(f"label link {a!r}-{b!r} is a self loop")
        link_pairs.add((ends[0], ends[1]))

    offset = len(artworks)
    return KnowledgeGraph(
        categories=tuple(table.categories),
        nodes=tuple(artworks) + tuple(table.order),
        assignment_edges=frozenset((a, lab + offset) for a, lab in pairs),
        label_link_edges=frozenset(_edge(x + offset, y + offset) for x, y in link_pairs),
    )


def extend_kg(
    kg: KnowledgeGraph,
    test_artworks: Sequence[ArtworkNode],
    pseudo: "PseudoLabelAssignment",
) -> ExtendedKG:
    """Append test artworks and connect each to its pseudo-label per used category."""
    used = tuple(kg.category_index(c) for c in pseudo.strategy.categories)
    used_names = {kg.categories[c] for c in used}

    nodes: list[Node] = list(kg.nodes)
    index = dict(kg._index)
    test_ids = []
    for art in test_artworks:
        key = ("artwork", art.name)
        if key in index:
            raise GraphError(f"test artwork {art.name!r} collides with an existing artwork")
        if art.split != "test":
            art = ArtworkNode(art.name, "test", art.feature_ref)
        index[key] = len(nodes)
        test_ids.append(len(nodes))
        nodes.append(art)

    test_names = {a.name for a in test_artworks}
    stray = set(pseudo.per_node) - test_names
    if stray:
        raise GraphError(f"pseudo-labels given for non-test artworks: {sorted(stray)[:5]}")

    pseudo_edges = set()
    for art in test_artworks:
        got = dict(pseudo.per_node.get(art.name, {}))
        if set(got) != used_names:
            raise GraphError(
                f"test artwork {art.name!r} has pseudo-labels for {sorted(got)}, "
                f"strategy needs {sorted(used_names)}"
            )
        for c in used:
            cname = kg.categories[c]
            key = ("label", cname, str(got[cname]))
            if key not in index:
                index[key] = len(nodes)
                nodes.append(LabelNode(c, str(got[cname])))
            pseudo_edges.add((index[("artwork", art.name)], index[key], c))

    return ExtendedKG(
        base=kg,
        categories=kg.categories,
        nodes=tuple(nodes),
        assignment_edges=kg.assignment_edges,
        label_link_edges=kg.label_link_edges,
        pseudo_edges=frozenset(pseudo_edges),
        test_nodes=tuple(test_ids),
        used_categories=used,
    )


def normalized_adjacency(graph: _GraphView) -> sp.csr_matrix:
    """Symmetric normalization of the self-looped adjacency, D~^-1/2 (A+I) D~^-1/2.

    Degrees include the self loop, so isolated nodes get a diagonal entry of 1.
    Values are computed from the canonical (sorted) edge set, making the result
    independent of edge insertion order.
    """
    n = graph.num_nodes
    e = graph.edge_array
    deg = np.bincount(e.ravel(), minlength=n).astype(np.float64) + 1.0
    diag = np.arange(n)
    rows = np.concatenate([e[:, 0], e[:, 1], diag])
    cols = np.concatenate([e[:, 1], e[:, 0], diag])
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    # the diagonal entry 1/sqrt(d*d) must equal 1/d exactly
    vals[2 * len(e):] = 1.0 / deg
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return adj


@dataclass(frozen=True)
class DegreeDistribution:
    category: int
    buckets: Mapping[int, int]
    sources: str


def degree_histogram(graph: _GraphView, category: str | int, sources: str = "train_only") -> DegreeDistribution:
    """Histogram of label-node degrees for one category.

    ``train_only`` counts assignment edges; ``train_plus_pseudo`` adds pseudo edges.
    Label-link edges are never counted.
    """
    if sources not in SOURCES:
        raise GraphError(f"unknown degree source {sources!r}")
    c = graph.category_index(category)
    labels = graph.label_ids(c)
    counts = Counter(lab for _, lab in graph.assignment_edges)
    if sources == "train_plus_pseudo":
        counts.update(lab for _, lab, _ in getattr(graph, "pseudo_edges", ()))
    buckets = Counter(counts.get(lab, 0) for lab in labels)
    return DegreeDistribution(c, dict(sorted(buckets.items())), sources)


def filter_low_degree(
    ekg: ExtendedKG, category: str | int, min_train_degree: int
) -> tuple[ExtendedKG, set[str]]:
    """Drop label nodes of ``category`` with fewer than ``min_train_degree`` training artworks.

    Removed nodes take all incident edges with them, so test artworks pseudo-labeled
    with a removed value lose that pseudo edge.  Returns the re-indexed graph and the
    excluded label values.
    """
    if min_train_degree < 0:
        raise GraphError("min_train_degree must be >= 0")
    c = ekg.category_index(category)
    train_deg = Counter(
        lab for art, lab in ekg.assignment_edges if ekg.nodes[art].split == "train"
    )
    drop = {lab for lab in ekg.label_ids(c) if train_deg.get(lab, 0) < min_train_degree}
    if not drop:
        return ekg, set()

    keep = [i for i in range(ekg.num_nodes) if i not in drop]
    remap = {old: new for new, old in enumerate(keep)}
    excluded = {ekg.nodes[i].value for i in drop}
    return (
        ExtendedKG(
            base=ekg.base,
            categories=ekg.categories,
            nodes=tuple(ekg.nodes[i] for i in keep),
            assignment_edges=frozenset(
                (remap[a], remap[b]) for a, b in ekg.assignment_edges if b not in drop
            ),
            label_link_edges=frozenset(
                (remap[a], remap[b])
                for a, b in ekg.label_link_edges
                if a not in drop and b not in drop
            ),
            pseudo_edges=frozenset(
                (remap[a], remap[b], k) for a, b, k in ekg.pseudo_edges if b not in drop
            ),
            test_nodes=tuple(remap[t] for t in ekg.test_nodes),
            used_categories=ekg.used_categories,
        ),
        excluded,
    )


def as_extended(kg: KnowledgeGraph) -> ExtendedKG:
    """View a plain KG as an extension with no test artworks."""
    return ExtendedKG(
        base=kg,
        categories=kg.categories,
        nodes=kg.nodes,
        assignment_edges=kg.assignment_edges,
        label_link_edges=kg.label_link_edges,
        pseudo_edges=frozenset(),
        test_nodes=(),
    )


def replace_pseudo_labels(ekg: ExtendedKG, category: str | int, new_labels: Mapping[int, int]) -> ExtendedKG:
    """Point the ``category`` pseudo edge of each given test node at a new label node.

    ``new_labels`` maps test node id -> label node id (which must already exist).
    """
    c = ekg.category_index(category)
    tests = set(ekg.test_nodes)
    for art, lab in new_labels.items():
        node = ekg.nodes[lab]
        if not isinstance(node, LabelNode) or node.category != c:
            raise GraphError(f"node {lab} is not a {ekg.categories[c]!r} label")
        if art not in tests:
            raise GraphError(f"node {art} is not a test artwork")
    kept = {e for e in ekg.pseudo_edges if not (e[2] == c and e[0] in new_labels)}
    kept |= {(art, lab, c) for art, lab in new_labels.items()}
    return ExtendedKG(
        base=ekg.base,
        categories=ekg.categories,
        nodes=ekg.nodes,
        assignment_edges=ekg.assignment_edges,
        label_link_edges=ekg.label_link_edges,
        pseudo_edges=frozenset(kept),
        test_nodes=ekg.test_nodes,
        used_categories=ekg.used_categories,
    )
