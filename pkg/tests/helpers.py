from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gcnboost.graph_core import ArtworkNode, _GraphView, build_kg, extend_kg
from gcnboost.pipeline import PseudoLabelAssignment, Strategy


@dataclass(frozen=True)
class PlainGraph(_GraphView):
    """Any undirected graph, nodes dressed up as training artworks."""

    categories: tuple
    nodes: tuple
    edges: frozenset


def plain_graph(n: int, edges) -> PlainGraph:
    nodes = tuple(ArtworkNode(f"v{i}", "train") for i in range(n))
    canon = frozenset((min(a, b), max(a, b)) for a, b in edges if a != b)
    return PlainGraph((), nodes, canon)


def random_graph(rng: np.random.Generator, n: int, p: float) -> PlainGraph:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return plain_graph(n, [tuple(map(int, e)) for e in np.argwhere(upper)])


def dense_normalized(n: int, edges) -> np.ndarray:
    """Reference normalization straight from the definition."""
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


CATS4 = ("Type", "School", "TimeFrame", "Author")


def toy_kg(n_train=6, n_val=2, cats=CATS4, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    arts = [ArtworkNode(f"a{i}", "train" if i < n_train else "validation", i) for i in range(n_train + n_val)]
    assigns = [(a.name, c, f"{c}{rng.integers(classes)}") for a in arts for c in cats]
    return build_kg(arts, assigns, categories=cats)


def toy_ekg(kg, n_test, used, seed=0):
    rng = np.random.default_rng(seed)
    tests = [ArtworkNode(f"t{i}", "test") for i in range(n_test)]
    strategy = Strategy("Sx", tuple(used))
    values = {c: [kg.nodes[i].value for i in kg.label_ids(c)] for c in used}
    per_node = {t.name: {c: values[c][rng.integers(len(values[c]))] for c in used} for t in tests}
    return extend_kg(kg, tests, PseudoLabelAssignment(strategy, per_node, "random"))


# criterion number -> (passed, detail); printed by the terminal summary hook
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
