import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnboost.graph_core import (
    ArtworkNode,
    GraphError,
    LabelNode,
    as_extended,
    build_kg,
    degree_histogram,
    extend_kg,
    filter_low_degree,
    normalized_adjacency,
    replace_pseudo_labels,
)
from gcnboost.pipeline import PseudoLabelAssignment, Strategy

from helpers import CATS4, dense_normalized, plain_graph, random_graph, toy_ekg, toy_kg


def arts(*names, split="train"):
    return [ArtworkNode(n, split) for n in names]


# ---------------------------------------------------------------- build_kg

def test_shared_label_node():
    kg = build_kg(arts("a1", "a2"), [("a1", "Type", "portrait"), ("a2", "Type", "portrait")])
    assert kg.num_nodes == 3
    assert len(kg.edges) == 2


def test_author_school_link():
    kg = build_kg(arts("a1"), [("a1", "Author", "van Gogh")], [(("Author", "van Gogh"), ("School", "Dutch"))])
    assert kg.num_nodes == 3
    assert len(kg.edges) == 2
    assert len(kg.label_link_edges) == 1
    assert kg.label_id("School", "Dutch") in next(iter(kg.label_link_edges))


def test_bare_link_endpoints_resolve_existing_labels():
    kg = build_kg(
        arts("a1", "a2"),
        [("a1", "Author", "van Gogh"), ("a2", "School", "Dutch")],
        [("van Gogh", "Dutch")],
    )
    assert len(kg.label_link_edges) == 1


def test_bare_link_to_unknown_label_rejected():
    with pytest.raises(GraphError, match="unknown label"):
        build_kg(arts("a1"), [("a1", "Author", "van Gogh")], [("van Gogh", "Dutch")])


def test_empty_inputs_give_artworks_only():
    kg = build_kg(arts("a1", "a2"), [])
    assert kg.num_nodes == 2 and len(kg.edges) == 0


def test_conflicting_assignment_names_artwork():
    with pytest.raises(GraphError, match="a1"):
        build_kg(arts("a1"), [("a1", "Type", "x"), ("a1", "Type", "y")])


def test_duplicate_assignment_collapses():
    kg = build_kg(arts("a1"), [("a1", "Type", "x"), ("a1", "Type", "x")])
    assert len(kg.edges) == 1


def test_rejects_test_split_and_unknown_artwork():
    with pytest.raises(GraphError):
        build_kg(arts("t", split="test"), [])
    with pytest.raises(GraphError, match="undeclared"):
        build_kg(arts("a1"), [("zz", "Type", "x")])
    with pytest.raises(GraphError, match="duplicate"):
        build_kg(arts("a1", "a1"), [])


def test_frozen_categories_reject_unknown():
    with pytest.raises(GraphError, match="unknown category"):
        build_kg(arts("a1"), [("a1", "Colour", "red")], categories=("Type",))


def test_graph_invariants_on_toy_kg():
    kg = toy_kg()
    ids = set()
    for a, lab in kg.assignment_edges:
        assert isinstance(kg.nodes[a], ArtworkNode) and isinstance(kg.nodes[lab], LabelNode)
        ids.add(a)
    for a, b in kg.label_link_edges:
        assert isinstance(kg.nodes[a], LabelNode) and isinstance(kg.nodes[b], LabelNode)
    assert all(i != j for i, j in kg.edges)
    per = {}
    for a, lab in kg.assignment_edges:
        key = (a, kg.nodes[lab].category)
        assert key not in per
        per[key] = lab
    labels = [(n.category, n.value) for n in kg.nodes if isinstance(n, LabelNode)]
    assert len(labels) == len(set(labels))


# ---------------------------------------------------------------- extend_kg

def test_ekg_counting_example():
    kg = build_kg(arts(*[f"a{i}" for i in range(10)]), [(f"a{i}", "Type", f"v{i % 3}") for i in range(10)],
                  categories=CATS4, labels=[(c, "z") for c in CATS4])
    assert len(kg.edges) == 10
    ekg = toy_ekg(kg, 5, CATS4)
    assert len(ekg.edges) == 30


def test_two_of_four_categories():
    kg = toy_kg()
    ekg = toy_ekg(kg, 5, ("School", "Author"))
    assert len(ekg.pseudo_edges) == 10
    deg = ekg.degrees()
    assert all(deg[t] == 2 for t in ekg.test_nodes)


def test_zero_test_artworks_is_identity():
    kg = toy_kg()
    ekg = toy_ekg(kg, 0, CATS4)
    assert ekg.nodes == kg.nodes and ekg.edges == kg.edges


def test_unseen_pseudo_value_creates_label():
    kg = toy_kg()
    t = ArtworkNode("t0", "test")
    pseudo = PseudoLabelAssignment(Strategy("S1", ("Type",)), {"t0": {"Type": "brand-new"}}, "random")
    ekg = extend_kg(kg, [t], pseudo)
    assert ekg.num_nodes == kg.num_nodes + 2
    assert ekg.pseudo_label_of(ekg.artwork_id("t0"), 0) == ekg.label_id("Type", "brand-new")


def test_extend_rejects_collision_and_mismatch():
    kg = toy_kg()
    s = Strategy("S1", ("Type",))
    with pytest.raises(GraphError, match="collides"):
        extend_kg(kg, [ArtworkNode("a0", "test")], PseudoLabelAssignment(s, {"a0": {"Type": "Type0"}}, "random"))
    with pytest.raises(GraphError, match="strategy needs"):
        extend_kg(kg, [ArtworkNode("t0", "test")], PseudoLabelAssignment(s, {}, "random"))


@settings(max_examples=100, deadline=None)
@given(
    n_edges_art=st.integers(1, 12),
    n_test=st.integers(0, 8),
    used=st.sets(st.sampled_from(CATS4), min_size=1),
    seed=st.integers(0, 2**16),
)
def test_edge_counting_identity(n_edges_art, n_test, used, seed):
    kg = toy_kg(n_train=n_edges_art, n_val=0, seed=seed)
    ekg = toy_ekg(kg, n_test, tuple(sorted(used)), seed)
    assert len(ekg.edges) - len(kg.edges) == n_test * len(used)
    assert len(ekg.pseudo_edges) == n_test * len(used)


# ---------------------------------------------------------------- normalized_adjacency

def test_single_edge():
    adj = normalized_adjacency(plain_graph(2, [(0, 1)])).toarray()
    assert np.array_equal(adj, np.full((2, 2), 0.5))


def test_triangle():
    adj = normalized_adjacency(plain_graph(3, [(0, 1), (1, 2), (0, 2)])).toarray()
    assert np.allclose(adj, 1 / 3, atol=1e-15, rtol=0)


def test_path():
    adj = normalized_adjacency(plain_graph(3, [(0, 1), (1, 2)])).toarray()
    assert adj[0, 0] == 0.5
    assert adj[1, 1] == 1 / 3
    assert adj[0, 1] == pytest.approx(1 / math.sqrt(6), abs=1e-15)
    assert adj[0, 2] == 0.0


def test_isolated_node_diagonal_one():
    adj = normalized_adjacency(plain_graph(3, [(0, 1)])).toarray()
    assert adj[2, 2] == 1.0


def test_insertion_order_does_not_matter():
    rng = np.random.default_rng(1)
    edges = [tuple(map(int, e)) for e in np.argwhere(np.triu(rng.random((20, 20)) < 0.2, 1))]
    a = normalized_adjacency(plain_graph(20, edges))
    b = normalized_adjacency(plain_graph(20, [(j, i) for i, j in reversed(edges)]))
    assert (a != b).nnz == 0


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 50), p=st.floats(0.0, 0.6), seed=st.integers(0, 2**16))
def test_normalization_matches_dense_oracle(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    adj = normalized_adjacency(g).toarray()
    assert np.array_equal(adj, adj.T)
    assert np.allclose(adj, dense_normalized(n, g.edges), atol=1e-12, rtol=0)
    assert np.all(adj[adj != 0] > 0) and adj.max() <= 1.0
    eig = np.linalg.eigvalsh(adj)
    assert eig.min() >= -1 - 1e-9 and eig.max() <= 1 + 1e-9


# ---------------------------------------------------------------- degree histograms

def star_ekg():
    kg = build_kg(arts(*[f"p{i}" for i in range(5)]), [(f"p{i}", "Author", "A") for i in range(5)],
                  categories=("Author", "School"))
    tests = [ArtworkNode(f"t{i}", "test") for i in range(2)]
    pseudo = PseudoLabelAssignment(Strategy("S1", ("Author",)), {t.name: {"Author": "A"} for t in tests}, "random")
    return extend_kg(kg, tests, pseudo)


def test_star_histograms():
    ekg = star_ekg()
    assert degree_histogram(ekg, "Author").buckets == {5: 1}
    assert degree_histogram(ekg, "Author", "train_plus_pseudo").buckets == {7: 1}
    assert degree_histogram(ekg, "School").buckets == {}


def test_histogram_sums_to_label_count():
    kg = toy_kg(classes=5)
    ekg = toy_ekg(kg, 4, CATS4)
    for c in CATS4:
        for src in ("train_only", "train_plus_pseudo"):
            assert sum(degree_histogram(ekg, c, src).buckets.values()) == len(ekg.label_ids(c))


def test_histogram_rejects_unknown():
    with pytest.raises(GraphError):
        degree_histogram(star_ekg(), "Colour")
    with pytest.raises(GraphError):
        degree_histogram(star_ekg(), "Author", "everything")


# ---------------------------------------------------------------- filter_low_degree

def test_filter_removes_small_author():
    names = [f"p{i}" for i in range(8)]
    assigns = [(n, "Author", "big") for n in names[:5]] + [(n, "Author", "small") for n in names[5:]]
    kg = build_kg(arts(*names), assigns, categories=("Author",))
    tests = [ArtworkNode("t0", "test")]
    ekg = extend_kg(kg, tests, PseudoLabelAssignment(Strategy("S1", ("Author",)), {"t0": {"Author": "small"}}, "random"))
    out, excluded = filter_low_degree(ekg, "Author", 5)
    assert excluded == {"small"}
    assert not out.has_key(("label", "Author", "small"))
    assert len(out.assignment_edges) == 5
    assert len(out.pseudo_edges) == 0
    # remaining ids are dense and keys survive
    assert out.num_nodes == ekg.num_nodes - 1
    assert out.nodes[out.artwork_id("t0")].name == "t0"
    assert all(max(e) < out.num_nodes for e in out.edges)


def test_filter_threshold_zero_is_identity():
    ekg = as_extended(toy_kg())
    out, excluded = filter_low_degree(ekg, "Type", 0)
    assert out is ekg and excluded == set()


def test_filter_counts_training_edges_only():
    kg = build_kg(
        [ArtworkNode("a", "train"), ArtworkNode("b", "validation"), ArtworkNode("c", "validation")],
        [("a", "Author", "x"), ("b", "Author", "x"), ("c", "Author", "x")],
    )
    _, excluded = filter_low_degree(as_extended(kg), "Author", 2)
    assert excluded == {"x"}


# ---------------------------------------------------------------- replace_pseudo_labels

def test_replace_keeps_one_edge_per_category():
    kg = toy_kg()
    ekg = toy_ekg(kg, 4, ("Type", "School"))
    target = ekg.label_ids("Type")[0]
    out = replace_pseudo_labels(ekg, "Type", {t: target for t in ekg.test_nodes})
    for t in out.test_nodes:
        cats = [c for a, _, c in out.pseudo_edges if a == t]
        assert sorted(cats) == [0, 1]
        assert out.pseudo_label_of(t, 0) == target


def test_replace_rejects_wrong_targets():
    ekg = toy_ekg(toy_kg(), 2, ("Type",))
    with pytest.raises(GraphError):
        replace_pseudo_labels(ekg, "Type", {ekg.test_nodes[0]: ekg.label_ids("School")[0]})
    with pytest.raises(GraphError):
        replace_pseudo_labels(ekg, "Type", {0: ekg.label_ids("Type")[0]})


def test_keys_and_ids_are_consistent():
    ekg = toy_ekg(toy_kg(), 3, CATS4)
    for i, k in enumerate(ekg.keys):
        assert ekg.index_of(k) == i
    assert len(set(itertools.chain(ekg.artwork_ids(), *(ekg.label_ids(c) for c in CATS4)))) == ekg.num_nodes
