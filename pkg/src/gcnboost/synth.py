"""Synthetic artwork datasets and a brute-force label-propagation oracle."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from gcnboost.dataset import Dataset
from gcnboost.gcn_engine import TaskLabels
from gcnboost.graph_core import ArtworkNode, _GraphView


class SpecError(ValueError):
    """Invalid synthetic spec; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class CategorySpec:
    name: str
    classes: int
    distribution: str = "uniform"  # "uniform" or "zipf"
    zipf_s: float = 1.5


@dataclass(frozen=True)
class CorrelationRule:
    source: str
    target: str
    coverage: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    num_train: int = 300
    num_validation: int = 50
    num_test: int = 100
    categories: tuple[CategorySpec, ...] = ()
    correlations: tuple[CorrelationRule, ...] = ()
    feature_dim: int = 32
    separation: float = 6.0
    noise: float = 1.0
    pseudo_corruption: Mapping[str, float] | float = 0.0
    seed: int = 0

    def corruption_for(self, category: str) -> float:
        if isinstance(self.pseudo_corruption, (int, float)):
            return float(self.pseudo_corruption)
        return float(self.pseudo_corruption.get(category, 0.0))

    def validate(self) -> "SyntheticSpec":
        for key in ("num_train", "num_validation", "num_test", "feature_dim"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 0:
                raise SpecError(key, f"must be a non-negative integer, got {v!r}")
        if self.num_train < 1:
            raise SpecError("num_train", "need at least one training artwork")
        if self.feature_dim < 1:
            raise SpecError("feature_dim", "must be >= 1")
        if not self.categories:
            raise SpecError("categories", "at least one category is required")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise SpecError("categories", "category names must be unique")
        for c in self.categories:
            if c.classes < 2:
                raise SpecError("categories", f"{c.name} needs >= 2 classes")
            if c.distribution not in ("uniform", "zipf"):
                raise SpecError("categories", f"{c.name}: unknown distribution {c.distribution!r}")
            if c.distribution == "zipf" and c.zipf_s <= 0:
                raise SpecError("categories", f"{c.name}: zipf_s must be positive")
        if not self.separation > 0:
            raise SpecError("separation", "must be > 0")
        if not self.noise >= 0:
            raise SpecError("noise", "must be >= 0")
        rates = (
            {n: self.pseudo_corruption for n in names}
            if isinstance(self.pseudo_corruption, (int, float))
            else dict(self.pseudo_corruption)
        )
        for n, r in rates.items():
            if n not in names:
                raise SpecError("pseudo_corruption", f"unknown category {n!r}")
            if not isinstance(r, (int, float)) or not 0.0 <= r <= 1.0:
                raise SpecError("pseudo_corruption", f"rate for {n} must be in [0, 1], got {r!r}")
        classes = {c.name: c.classes for c in self.categories}
        targets = set()
        for rule in self.correlations:
            if rule.source not in classes or rule.target not in classes:
                raise SpecError("correlations", f"unknown category in {rule.source}->{rule.target}")
            if rule.source == rule.target:
                raise SpecError("correlations", "rule maps a category onto itself")
            if rule.target in targets:
                raise SpecError("correlations", f"{rule.target} is the target of two rules")
            targets.add(rule.target)
            if not 0.0 <= rule.coverage <= 1.0:
                raise SpecError("correlations", f"coverage must be in [0, 1], got {rule.coverage}")
            if rule.coverage == 1.0 and classes[rule.target] > classes[rule.source]:
                raise SpecError(
                    "correlations",
                    f"{rule.source}->{rule.target}: full coverage cannot populate "
                    f"{classes[rule.target]} target classes from {classes[rule.source]} sources",
                )
        if {r.source for r in self.correlations} & targets:
            raise SpecError("correlations", "chained rules are not supported")
        return self

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticSpec":
        data = dict(data)
        base = cls()
        if "preset" in data:
            name = data.pop("preset")
            if name not in PRESETS:
                raise SpecError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
            base = PRESETS[name]
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise SpecError(key, "unknown spec key")
        if "categories" in data:
            try:
                data["categories"] = tuple(CategorySpec(**c) for c in data["categories"])
            except TypeError as exc:
                raise SpecError("categories", str(exc)) from None
        if "correlations" in data:
            try:
                data["correlations"] = tuple(CorrelationRule(**r) for r in data["correlations"])
            except TypeError as exc:
                raise SpecError("correlations", str(exc)) from None
        return replace(base, **data).validate()


def class_sizes(n: int, classes: int, distribution: str = "uniform", s: float = 1.5) -> np.ndarray:
    """Deterministic class sizes summing to ``n``, non-increasing in class index.

    Sizes are ``n * p_j`` rounded by largest remainder with p uniform or p_j ∝ j^-s.
    """
    if distribution == "uniform":
        p = np.full(classes, 1.0 / classes)
    else:
        w = np.arange(1, classes + 1, dtype=np.float64) ** -s
        p = w / w.sum()
    raw = n * p
    sizes = np.floor(raw).astype(np.int64)
    short = n - sizes.sum()
    # stable sort keeps lower indices first among equal remainders
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:short]] += 1
    return sizes


def _centers(rng: np.random.Generator, k: int, dim: int, separation: float) -> np.ndarray:
    c = rng.standard_normal((k, dim))
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dmin = dist[~np.eye(k, dtype=bool)].min()
    return c * (separation / dmin)


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> Dataset:
    """Draw a dataset: labels, label links, class-conditioned features, pseudo-labels."""
    spec.validate()
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = spec.num_train + spec.num_validation + spec.num_test
    cats = {c.name: c for c in spec.categories}
    rule_for = {r.target: r for r in spec.correlations}

    labels: dict[str, np.ndarray] = {}
    for c in spec.categories:
        sizes = class_sizes(n, c.classes, c.distribution, c.zipf_s)
        labels[c.name] = rng.permutation(np.repeat(np.arange(c.classes), sizes))

    links = []
    for c in spec.categories:
        rule = rule_for.get(c.name)
        if rule is None:
            continue
        ks, kt = cats[rule.source].classes, c.classes
        # surjective when ks >= kt: every target class gets at least one source
        base = np.arange(kt) if ks >= kt else rng.integers(kt, size=ks)
        fill = rng.integers(kt, size=max(0, ks - kt))
        mapping = rng.permutation(np.concatenate([base[:ks], fill]))
        covered = rng.permutation(n)[: int(round(rule.coverage * n))]
        labels[c.name][covered] = mapping[labels[rule.source][covered]]
        links += [(rule.source, int(a), c.name, int(mapping[a])) for a in range(ks)]

    features = spec.noise * rng.standard_normal((n, spec.feature_dim))
    for c in spec.categories:
        features += _centers(rng, c.classes, spec.feature_dim, spec.separation)[labels[c.name]]

    def value(cat: str, j: int) -> str:
        return f"{cat}_{j:03d}"

    order = rng.permutation(n)
    split = np.empty(n, dtype=object)
    split[order[: spec.num_train]] = "train"
    split[order[spec.num_train: spec.num_train + spec.num_validation]] = "validation"
    split[order[spec.num_train + spec.num_validation:]] = "test"
    artworks = tuple(ArtworkNode(f"a{i:05d}", str(split[i]), i) for i in range(n))

    assignments, truth = [], {}
    for i, art in enumerate(artworks):
        row = {c: value(c, int(labels[c][i])) for c in cats}
        if art.split == "test":
            truth[art.name] = row
        else:
            assignments += [(art.name, c, v) for c, v in row.items()]

    pseudo = {}
    test_idx = [i for i, a in enumerate(artworks) if a.split == "test"]
    for c in spec.categories:
        rate = spec.corruption_for(c.name)
        flip = rng.random(len(test_idx)) < rate
        shift = rng.integers(1, c.classes, size=len(test_idx))
        for j, i in enumerate(test_idx):
            t = int(labels[c.name][i])
            guess = (t + shift[j]) % c.classes if flip[j] else t
            pseudo.setdefault(artworks[i].name, {})[c.name] = value(c.name, int(guess))

    used = {(c.name, value(c.name, int(j))) for c in spec.categories for j in np.unique(labels[c.name])}
    used |= {(s, value(s, a)) for s, a, _, _ in links} | {(t, value(t, b)) for _, _, t, b in links}
    vocab = tuple(
        (c.name, value(c.name, j)) for c in spec.categories for j in range(c.classes)
        if (c.name, value(c.name, j)) in used
    )
    return Dataset(
        categories=tuple(cats),
        artworks=artworks,
        labels=vocab,
        assignments=tuple(assignments),
        links=tuple(((s, value(s, a)), (t, value(t, b))) for s, a, t, b in links),
        features=features.astype(np.float32),
        truth=truth,
        pseudo=pseudo,
        meta={"seed": seed},
    )


_FOUR = (
    CategorySpec("Type", 6),
    CategorySpec("School", 6),
    CategorySpec("TimeFrame", 6),
    CategorySpec("Author", 12),
)

PRESETS: dict[str, SyntheticSpec] = {
    "easy": SyntheticSpec(
        num_train=300, num_validation=50, num_test=100,
        categories=_FOUR, feature_dim=32, separation=8.0, noise=1.0,
        pseudo_corruption=0.1,
    ),
    "correlated": SyntheticSpec(
        num_train=420, num_validation=60, num_test=120,
        categories=(
            CategorySpec("Type", 6),
            CategorySpec("School", 6),
            CategorySpec("TimeFrame", 6),
            CategorySpec("Author", 18),
        ),
        correlations=(CorrelationRule("Author", "School", 1.0),),
        feature_dim=32, separation=3.0, noise=1.0, pseudo_corruption=0.2,
    ),
    "longtail": SyntheticSpec(
        num_train=420, num_validation=60, num_test=120,
        categories=(
            CategorySpec("Type", 6),
            CategorySpec("School", 6),
            CategorySpec("TimeFrame", 6),
            CategorySpec("Author", 60, "zipf", 1.5),
        ),
        feature_dim=32, separation=3.0, noise=1.0, pseudo_corruption=0.2,
    ),
}


def preset(name: str, **overrides) -> SyntheticSpec:
    if name not in PRESETS:
        raise SpecError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides).validate()


def oracle_label_propagation(graph: _GraphView, task: TaskLabels, max_rounds: int = 20) -> dict[int, int]:
    """Iterative plurality vote over artworks, used as an independent baseline.

    Labeled artworks (the train mask) keep their targets.  Each round every other
    artwork collects one vote per labeled/visited artwork neighbor, plus the
    labels of all artworks attached to each neighboring label node (excluding
    itself), and adopts the plurality class; ties go to the lowest index.  Label
    nodes report the plurality of their attached artworks.  Artworks that never
    receive a vote get class 0.  Stops at a fixpoint or after ``max_rounds``.
    """
    n, k = graph.num_nodes, task.k
    is_art = np.array([isinstance(x, ArtworkNode) for x in graph.nodes])
    adj = graph.adjacency
    art_diag = sp.diags(is_art.astype(np.float64))
    lab_diag = sp.diags((~is_art).astype(np.float64))
    art_art = art_diag @ adj @ art_diag
    art_lab = art_diag @ adj @ lab_diag
    lab_art = lab_diag @ adj @ art_diag
    label_deg = np.asarray(art_lab.sum(axis=1)).ravel()

    fixed = np.zeros(n, dtype=bool)
    state = np.full(n, -1, dtype=np.int64)
    for i in task.train_mask:
        fixed[i] = True
        state[i] = task.targets[i]
    free = is_art & ~fixed

    def onehot(s):
        y = np.zeros((n, k))
        on = s >= 0
        y[np.flatnonzero(on), s[on]] = 1.0
        return y

    for _ in range(max_rounds):
        y = onehot(np.where(is_art, state, -1))
        bags = lab_art @ y
        votes = art_art @ y + art_lab @ bags - label_deg[:, None] * y
        has = votes.max(axis=1) > 0
        new = state.copy()
        upd = free & has
        new[upd] = np.argmax(votes[upd], axis=1)
        if np.array_equal(new, state):
            break
        state = new

    y = onehot(np.where(is_art, state, -1))
    bags = lab_art @ y
    lab_has = (~is_art) & (bags.max(axis=1) > 0)
    state[lab_has] = np.argmax(bags[lab_has], axis=1)
    return {i: int(max(s, 0)) for i, s in enumerate(state)}
