import numpy as np
import pytest

from gcnboost.gcn_engine import TaskLabels
from gcnboost.graph_core import ArtworkNode, as_extended, build_kg, extend_kg
from gcnboost.pipeline import Strategy, pseudo_assignment, task_labels
from gcnboost.synth import (
    PRESETS,
    CategorySpec,
    CorrelationRule,
    SpecError,
    SyntheticSpec,
    class_sizes,
    generate_synthetic,
    oracle_label_propagation,
    preset,
)


def spec(**kw):
    base = dict(num_train=40, num_validation=10, num_test=10, categories=(CategorySpec("Type", 3),))
    base.update(kw)
    return SyntheticSpec(**base)


def test_zipf_sizes_long_tail():
    sizes = class_sizes(500, 50, "zipf", 1.5)
    assert sizes.sum() == 500
    assert sizes.max() >= 10 * np.median(sizes)
    assert np.all(np.diff(sizes) <= 0)


def test_drawn_zipf_labels_match_sizes():
    ds = generate_synthetic(spec(num_train=400, num_validation=50, num_test=50,
                                 categories=(CategorySpec("Author", 50, "zipf", 1.5),)), seed=3)
    labels = [v for _, _, v in ds.assignments] + [row["Author"] for row in ds.truth.values()]
    counts = np.sort(np.unique(labels, return_counts=True)[1])[::-1]
    assert counts.max() >= 10 * np.median(counts)


def test_uniform_sizes():
    assert list(class_sizes(10, 3)) == [4, 3, 3]


def test_zero_corruption_pseudo_equals_truth():
    ds = generate_synthetic(spec(pseudo_corruption=0.0), seed=2)
    assert ds.pseudo == ds.truth


def test_full_corruption_never_matches():
    ds = generate_synthetic(spec(pseudo_corruption=1.0), seed=2)
    assert all(ds.pseudo[n]["Type"] != ds.truth[n]["Type"] for n in ds.truth)


def test_author_determines_school():
    ds = generate_synthetic(preset("correlated"), seed=4)
    school_of = {}
    rows = {}
    for art, cat, value in ds.assignments:
        rows.setdefault(art, {})[cat] = value
    rows.update(ds.truth)
    for row in rows.values():
        assert school_of.setdefault(row["Author"], row["School"]) == row["School"]
    authors = [lab for lab in ds.labels if lab[0] == "Author"]
    assert len(ds.links) == len(authors) == 18
    linked = {a for a, _ in ds.links}
    assert linked == set(authors)
    for (_, author), (_, school) in ds.links:
        assert school_of[author] == school


def test_generator_deterministic():
    a = generate_synthetic(preset("easy"), seed=7)
    b = generate_synthetic(preset("easy"), seed=7)
    assert a.assignments == b.assignments and a.truth == b.truth and a.pseudo == b.pseudo
    assert np.array_equal(a.features, b.features) and a.links == b.links


def test_every_artwork_one_label_per_category():
    ds = generate_synthetic(preset("longtail"), seed=0)
    per = {}
    for art, cat, _ in ds.assignments:
        per.setdefault(art, []).append(cat)
    assert all(sorted(c) == sorted(ds.categories) for c in per.values())
    assert all(set(r) == set(ds.categories) for r in ds.truth.values())
    assert np.all(np.isfinite(ds.features))


def test_class_centers_separated():
    ds = generate_synthetic(spec(noise=0.0, separation=5.0), seed=1)
    rows = {}
    for art, _, value in ds.assignments:
        rows[value] = ds.features[int(art[1:])]
    pts = np.array(list(rows.values()))
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    assert dist[~np.eye(len(pts), dtype=bool)].min() >= 5.0 - 1e-4


@pytest.mark.parametrize(
    "kw, key",
    [
        (dict(pseudo_corruption=1.5), "pseudo_corruption"),
        (dict(pseudo_corruption={"Type": -0.1}), "pseudo_corruption"),
        (dict(separation=0.0), "separation"),
        (dict(categories=(CategorySpec("Type", 1),)), "categories"),
        (dict(categories=()), "categories"),
        (dict(categories=(CategorySpec("A", 3), CategorySpec("B", 6)),
              correlations=(CorrelationRule("A", "B", 1.0),)), "correlations"),
        (dict(categories=(CategorySpec("A", 3),), correlations=(CorrelationRule("A", "Z"),)), "correlations"),
    ],
)
def test_invalid_specs_name_key(kw, key):
    with pytest.raises(SpecError) as err:
        spec(**kw).validate()
    assert err.value.key == key and key in str(err.value)


def test_many_to_few_full_coverage_is_valid():
    s = spec(categories=(CategorySpec("Author", 9), CategorySpec("School", 3)),
             correlations=(CorrelationRule("Author", "School", 1.0),))
    assert s.validate() is s


def test_from_dict_presets_and_unknown_keys():
    s = SyntheticSpec.from_dict({"preset": "easy", "num_test": 7})
    assert s.num_test == 7 and s.categories == PRESETS["easy"].categories
    with pytest.raises(SpecError, match="colour"):
        SyntheticSpec.from_dict({"preset": "easy", "colour": 1})
    with pytest.raises(SpecError, match="preset"):
        SyntheticSpec.from_dict({"preset": "hard"})
    s = SyntheticSpec.from_dict({"categories": [{"name": "Type", "classes": 4}], "correlations": []})
    assert s.categories[0].classes == 4


# ---------------------------------------------------------------- oracle

def two_artworks_one_author():
    kg = build_kg([ArtworkNode("a", "train"), ArtworkNode("b", "validation")],
                  [("a", "Author", "x"), ("b", "Author", "x")])
    return as_extended(kg)


def test_oracle_shared_author():
    g = two_artworks_one_author()
    a, b = g.artwork_id("a"), g.artwork_id("b")
    task = TaskLabels(0, 5, {a: 3, b: 0}, (a,))
    assert oracle_label_propagation(g, task)[b] == 3


def test_oracle_unreachable_gets_zero():
    kg = build_kg([ArtworkNode("a", "train"), ArtworkNode("b", "train"), ArtworkNode("c", "validation")],
                  [("a", "Author", "x"), ("b", "Author", "x")])
    g = as_extended(kg)
    a = g.artwork_id("a")
    out = oracle_label_propagation(g, TaskLabels(0, 4, {a: 2}, (a,)))
    assert out[g.artwork_id("c")] == 0
    assert out[g.artwork_id("b")] == 2


def easy_setup(seed=0):
    ds = generate_synthetic(preset("easy"), seed=seed)
    s = Strategy.make("Sall", (), ds.categories)
    ekg = extend_kg(ds.kg, ds.test_artworks, pseudo_assignment(ds, s, "ingested", {}))
    return ds, ekg


def oracle_accuracy(ds, ekg, cat, task):
    _, classes = task_labels(ekg, cat)
    out = oracle_label_propagation(ekg, task)
    hits = [ekg.nodes[classes[out[t]]].value == ds.truth[ekg.nodes[t].name][cat] for t in ekg.test_nodes]
    return float(np.mean(hits))


def test_oracle_monotone_in_labels():
    ds, ekg = easy_setup()
    for cat in ds.categories:
        task, _ = task_labels(ekg, cat)
        base = TaskLabels(task.category, task.k, task.targets, task.train_mask)
        more = TaskLabels(task.category, task.k, task.targets, task.train_mask + task.val_mask)
        assert oracle_accuracy(ds, ekg, cat, more) >= oracle_accuracy(ds, ekg, cat, base)


def test_oracle_fixpoint():
    ds, ekg = easy_setup(1)
    task, _ = task_labels(ekg, "Author")
    a = oracle_label_propagation(ekg, task, max_rounds=20)
    b = oracle_label_propagation(ekg, task, max_rounds=21)
    assert a == b
