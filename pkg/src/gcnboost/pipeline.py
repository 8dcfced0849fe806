"""Pseudo-labeling, per-strategy EKG training/evaluation and the ablation grid."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from gcnboost import config as cfgmod
from gcnboost.dataset import DataError, Dataset
from gcnboost.embed_init import (
    EmbeddingTable,
    assemble_initial_features,
    node2vec_walks,
    train_skipgram,
)
from gcnboost.gcn_engine import (
    GcnModel,
    TaskLabels,
    Trainer,
    TrainHistory,
    forward,
    predict,
)
from gcnboost.graph_core import (
    ExtendedKG,
    extend_kg,
    filter_low_degree,
    normalized_adjacency,
    replace_pseudo_labels,
)

log = logging.getLogger(__name__)

TAGS = ("S0", "S1", "S2", "S3", "Sall")
PSEUDO_SOURCES = ("random", "baseline_model", "ingested_file")


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class Strategy:
    tag: str
    categories: tuple[str, ...]

    @classmethod
    def make(cls, tag: str, categories: Sequence[str], all_categories: Sequence[str]) -> "Strategy":
        if tag not in TAGS:
            raise StrategyError(f"unknown strategy tag {tag!r}")
        cats = tuple(categories) if categories else ()
        unknown = [c for c in cats if c not in all_categories]
        if unknown:
            raise StrategyError(f"unknown categories {unknown}")
        if len(set(cats)) != len(cats):
            raise StrategyError(f"repeated category in {cats}")
        if tag in ("S0", "Sall"):
            if cats and set(cats) != set(all_categories):
                raise StrategyError(f"{tag} uses every category")
            cats = tuple(all_categories)
        elif len(cats) != int(tag[1]):
            raise StrategyError(f"{tag} needs exactly {tag[1]} categories, got {list(cats)}")
        return cls(tag, cats)

    @classmethod
    def parse(cls, text: str, all_categories: Sequence[str]) -> "Strategy":
        """``"S2:School,Author"``, ``"Sall"``, ``"S0"``."""
        tag, _, rest = text.partition(":")
        cats = [c.strip() for c in rest.split(",") if c.strip()]
        return cls.make(tag.strip(), cats, all_categories)

    def describe(self) -> str:
        return "+".join(sorted(self.categories))


@dataclass(frozen=True)
class PseudoLabelAssignment:
    strategy: Strategy
    per_node: Mapping[str, Mapping[str, str]]
    source: str

    def __post_init__(self):
        want = set(self.strategy.categories)
        for name, cats in self.per_node.items():
            if set(cats) != want:
                raise StrategyError(f"pseudo-labels of {name!r} cover {sorted(cats)}, need {sorted(want)}")


@dataclass
class Metrics:
    per_category: dict[str, float | None]
    counts: dict[str, int]
    correct: dict[str, int] = field(default_factory=dict)
    unseen_truth: dict[str, int] = field(default_factory=dict)

    def mean_accuracy(self) -> float:
        vals = [v for v in self.per_category.values() if v is not None]
        return float(np.mean(vals)) if vals else float("nan")


@dataclass
class StrategyResult:
    strategy: Strategy
    metrics: Metrics
    models: dict[str, GcnModel]
    histories: dict[str, TrainHistory]
    ekg: ExtendedKG
    adjacency: Any
    features: np.ndarray
    excluded: dict[str, set[str]]
    predictions: dict[str, dict[str, str]]

    def hidden(self) -> np.ndarray:
        """Concatenated first-layer GCN outputs of every task model."""
        return np.hstack([forward(m, self.adjacency, self.features)[0] for m in self.models.values()])


# ---------------------------------------------------------------- pseudo-labels

def baseline_pseudo_labeler(
    train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, k: int,
    iterations: int = 300, lr: float = 0.5, l2: float = 1e-4, seed: int = 0,
) -> tuple[np.ndarray, list[int]]:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with training statistics.  Returns the argmax
    class per test row and the classes absent from training (never predicted).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if train_x.shape[1] != test_x.shape[1]:
        raise ValueError("train and test feature widths differ")
    absent = sorted(set(range(k)) - set(train_y.tolist()))
    if absent:
        log.warning("classes %s have no training example and cannot be predicted", absent)
    present = np.unique(train_y)
    if len(present) == 1:
        return np.full(len(test_x), present[0], dtype=np.int64), absent

    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd == 0] = 1.0
    xs = np.hstack([(train_x - mu) / sd, np.ones((len(train_x), 1))])
    xt = np.hstack([(test_x - mu) / sd, np.ones((len(test_x), 1))])
    rng = np.random.default_rng(seed)
    W = 0.01 * rng.standard_normal((xs.shape[1], k))
    Y = np.zeros((len(xs), k))
    Y[np.arange(len(xs)), train_y] = 1.0
    blocked = np.zeros(k, dtype=bool)
    blocked[absent] = True
    for _ in range(iterations):
        z = xs @ W
        z[:, blocked] = -np.inf
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        grad = xs.T @ (p - Y) / len(xs) + l2 * W
        W -= lr * grad
    z = xt @ W
    z[:, blocked] = -np.inf
    return np.argmax(z, axis=1).astype(np.int64), absent


def random_pseudo_labels(
    test_names: Sequence[str], categories: Sequence[str],
    values: Mapping[str, Sequence[str]], seed: int, strategy: Strategy | None = None,
) -> PseudoLabelAssignment:
    """Uniform draw per node and category over ``values[category]``."""
    rng = np.random.default_rng(seed)
    per_node: dict[str, dict[str, str]] = {n: {} for n in test_names}
    for cat in categories:
        pool = list(values[cat])
        if not pool:
            raise StrategyError(f"category {cat!r} has no observed labels")
        picks = rng.integers(len(pool), size=len(test_names))
        for name, j in zip(test_names, picks):
            per_node[name][cat] = pool[j]
    strategy = strategy or Strategy("S0", tuple(categories))
    return PseudoLabelAssignment(strategy, per_node, "random")


def observed_values(ds: Dataset) -> dict[str, list[str]]:
    """Label values with at least one train/validation artwork, in label-node order."""
    kg = ds.kg
    used = {lab for _, lab in kg.assignment_edges}
    out: dict[str, list[str]] = {c: [] for c in kg.categories}
    for i in sorted(used):
        node = kg.nodes[i]
        out[kg.categories[node.category]].append(node.value)
    return out


def baseline_predictions(ds: Dataset, cfg: Mapping[str, Any]) -> dict[str, dict[str, str]]:
    """Stand-in for the external pseudo-labeler: one linear classifier per category,
    fit on train+validation artworks, applied to the test artworks."""
    known = [a for a in ds.artworks if a.split != "test"]
    test = ds.test_artworks
    x_train, x_test = ds.feature_rows(known), ds.feature_rows(test)
    out: dict[str, dict[str, str]] = {a.name: {} for a in test}
    values = observed_values(ds)
    for cat in ds.categories:
        classes = values[cat]
        idx = {v: j for j, v in enumerate(classes)}
        rows = [i for i, a in enumerate(known) if cat in ds.known_labels.get(a.name, {})]
        y = [idx[ds.known_labels[known[i].name][cat]] for i in rows]
        pred, _ = baseline_pseudo_labeler(
            x_train[rows], np.array(y), x_test, len(classes),
            iterations=cfg["baseline.iterations"], lr=cfg["baseline.lr"], l2=cfg["baseline.l2"],
            seed=cfgmod.derive_seed(cfg["seed"], f"baseline:{cat}"),
        )
        for a, j in zip(test, pred):
            out[a.name][cat] = classes[j]
    return out


def pseudo_assignment(ds: Dataset, strategy: Strategy, source: str, cfg: Mapping[str, Any],
                      cache: dict | None = None) -> PseudoLabelAssignment:
    cache = {} if cache is None else cache
    names = [a.name for a in ds.test_artworks]
    if strategy.tag == "S0" or source == "random":
        return random_pseudo_labels(
            names, strategy.categories, observed_values(ds),
            cfgmod.derive_seed(cfg["seed"], "pseudo:random"), strategy,
        )
    if source in ("baseline", "baseline_model"):
        if "baseline" not in cache:
            cache["baseline"] = baseline_predictions(ds, cfg)
        full, label = cache["baseline"], "baseline_model"
    elif source in ("ingested", "ingested_file"):
        if ds.pseudo is None:
            raise DataError("pseudo-label source is 'ingested' but the dataset has no pseudo.csv")
        full, label = ds.pseudo, "ingested_file"
    else:
        raise StrategyError(f"unknown pseudo-label source {source!r}")
    per_node = {}
    for name in names:
        row = full.get(name, {})
        missing = [c for c in strategy.categories if c not in row]
        if missing:
            raise DataError(f"no pseudo-label for test artwork {name!r} in {missing}")
        per_node[name] = {c: row[c] for c in strategy.categories}
    return PseudoLabelAssignment(strategy, per_node, label)


# ---------------------------------------------------------------- tasks

def task_labels(ekg: ExtendedKG, category: str | int) -> tuple[TaskLabels, list[int]]:
    """Targets from ground-truth assignment edges; returns the task and the class
    list (label node ids in node order)."""
    c = ekg.category_index(category)
    classes = ekg.label_ids(c)
    cls_of = {lab: j for j, lab in enumerate(classes)}
    targets = {art: cls_of[lab] for art, lab in ekg.assignment_edges if lab in cls_of}
    train = tuple(sorted(i for i in targets if ekg.nodes[i].split == "train"))
    val = tuple(sorted(i for i in targets if ekg.nodes[i].split == "validation"))
    return TaskLabels(c, len(classes), targets, train, val), classes


def evaluate(
    predictions: Mapping[str, Mapping[str, str]],
    truth: Mapping[str, Mapping[str, str]],
    excluded: Mapping[str, set[str]] | None = None,
    categories: Sequence[str] | None = None,
    known: Mapping[str, set[str]] | None = None,
) -> Metrics:
    """Top-1 accuracy per category over test nodes whose true label is not excluded.

    A category with nothing to evaluate reports ``None``.  Truth values never seen
    in training still count (as misses) and are tallied in ``unseen_truth``.
    """
    excluded = excluded or {}
    if categories is None:
        categories = sorted({c for row in truth.values() for c in row})
    acc, counts, correct, unseen = {}, {}, {}, {}
    for cat in categories:
        n_eval = n_ok = n_unseen = 0
        for name, row in truth.items():
            if cat not in row or row[cat] in excluded.get(cat, ()):
                continue
            guess = predictions.get(name, {}).get(cat)
            if guess is None:
                raise DataError(f"no prediction for test artwork {name!r} in {cat!r}")
            n_eval += 1
            n_ok += guess == row[cat]
            if known is not None and row[cat] not in known.get(cat, ()):
                n_unseen += 1
        if n_unseen:
            log.warning("%d %s test labels never appear in training", n_unseen, cat)
        acc[cat] = n_ok / n_eval if n_eval else None
        counts[cat], correct[cat], unseen[cat] = n_eval, n_ok, n_unseen
    return Metrics(acc, counts, correct, unseen)


# ---------------------------------------------------------------- strategy runs

def embedding_table(ds: Dataset, ekg: ExtendedKG, cfg: Mapping[str, Any], cache: dict | None = None) -> EmbeddingTable:
    """node2vec table, computed over the labeled KG (shared by all strategies) or
    over the given EKG, per ``n2v.graph``."""
    cache = {} if cache is None else cache
    if cfg["n2v.graph"] == "kg":
        if "n2v" not in cache:
            cache["n2v"] = train_skipgram(node2vec_walks(ds.kg, cfgmod.walk_params(cfg)), cfgmod.skipgram_params(cfg))
        return cache["n2v"]
    return train_skipgram(node2vec_walks(ekg, cfgmod.walk_params(cfg)), cfgmod.skipgram_params(cfg))


def refresh_pseudo_labels(ekg: ExtendedKG, predictions: Mapping[str, Mapping[int, int]],
                          classes: Mapping[str, Sequence[int]]):
    """Re-point strategy pseudo edges at the current predictions; returns (ekg, adjacency).

    ``predictions[cat]`` maps test node id -> class index into ``classes[cat]``.
    """
    for c in ekg.used_categories:
        cat = ekg.categories[c]
        if cat in predictions:
            ekg = replace_pseudo_labels(
                ekg, c, {node: classes[cat][j] for node, j in predictions[cat].items()}
            )
    return ekg, normalized_adjacency(ekg)


def run_strategy(
    ds: Dataset, strategy: Strategy, cfg: Mapping[str, Any],
    pseudo_source: str | None = None, cache: dict | None = None,
    filters: Iterable[tuple[str, int]] | None = None,
) -> StrategyResult:
    """Build the strategy's EKG, train one GCN per category and score the test set."""
    cache = {} if cache is None else cache
    source = pseudo_source or cfg["pseudo.source"]
    filters = cfgmod.parse_filters(cfg["filter"]) if filters is None else list(filters)

    pseudo = pseudo_assignment(ds, strategy, source, cfg, cache)
    ekg = extend_kg(ds.kg, ds.test_artworks, pseudo)
    excluded: dict[str, set[str]] = {}
    for cat, min_deg in filters:
        ekg, dropped = filter_low_degree(ekg, cat, min_deg)
        excluded.setdefault(cat, set()).update(dropped)

    table = embedding_table(ds, ekg, cfg, cache)
    H0 = assemble_initial_features(
        ekg, cfg["init.scheme"], table, cfg["sg.dim"], cfgmod.init_seed(cfg),
        raw_features=ds.features if cfg["init.scheme"] == "visual_plus_n2v" else None,
        projection=cfg["init.projection"],
    )
    adj = normalized_adjacency(ekg)

    tasks, classes, trainers = {}, {}, {}
    for cat in ds.categories:
        tasks[cat], classes[cat] = task_labels(ekg, cat)
        if not tasks[cat].train_mask:
            raise DataError(f"category {cat!r} has no training artworks left")
        trainers[cat] = Trainer(adj, H0, tasks[cat], cfgmod.train_config(cfg, cat))

    every = cfg["refresh_every"]
    test_ids = list(ekg.test_nodes)
    it = 0
    while True:
        alive = [t.step() for t in trainers.values()]
        it += 1
        if not any(alive):
            break
        if every and it % every == 0:
            preds = {
                cat: predict(trainers[cat].model, adj, H0, test_ids)
                for cat in (ekg.categories[c] for c in ekg.used_categories)
            }
            ekg, adj = refresh_pseudo_labels(ekg, preds, classes)
            for t in trainers.values():
                t.set_adjacency(adj)

    models, histories, predictions = {}, {}, {a.name: {} for a in ds.test_artworks}
    for cat, t in trainers.items():
        models[cat], histories[cat] = t.result()
        for node, j in predict(models[cat], adj, H0, test_ids).items():
            predictions[ekg.nodes[node].name][cat] = ekg.nodes[classes[cat][j]].value
    known = {cat: {ekg.nodes[i].value for i in classes[cat]} for cat in ds.categories}
    metrics = evaluate(predictions, ds.truth, excluded, ds.categories, known)
    return StrategyResult(strategy, metrics, models, histories, ekg, adj, H0, excluded, predictions)


# ---------------------------------------------------------------- ablation grid

@dataclass
class ReportRow:
    tag: str
    categories: tuple[str, ...]
    metrics: Metrics
    duplicate: bool = False


@dataclass
class AblationReport:
    rows: list[ReportRow]
    categories: tuple[str, ...]
    seed: int
    fingerprint: str

    def to_json(self) -> str:
        body = {
            "seed": self.seed,
            "config_fingerprint": self.fingerprint,
            "categories": list(self.categories),
            "rows": [
                {
                    "tag": r.tag,
                    "categories": sorted(r.categories),
                    "duplicate": r.duplicate,
                    "accuracy": r.metrics.per_category,
                    "counts": r.metrics.counts,
                    "correct": r.metrics.correct,
                }
                for r in self.rows
            ],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tag", "categories", "duplicate"]
                   + [f"acc_{c}" for c in self.categories]
                   + [f"n_{c}" for c in self.categories] + ["seed", "config_fingerprint"])
        for r in self.rows:
            acc = r.metrics.per_category
            w.writerow(
                [r.tag, "+".join(sorted(r.categories)), int(r.duplicate)]
                + ["" if acc[c] is None else repr(acc[c]) for c in self.categories]
                + [r.metrics.counts[c] for c in self.categories]
                + [self.seed, self.fingerprint]
            )
        return buf.getvalue()


def strategy_grid(categories: Sequence[str], pairs=None, triples=None) -> list[Strategy]:
    """S0, every S1, the S2 pairs, the S3 triples, then Sall.

    Pairs and triples default to all combinations when there are at most four
    categories (and to none otherwise).
    """
    cats = list(categories)
    if len(cats) < 2:
        raise StrategyError("the ablation grid needs at least two categories")
    small = len(cats) <= 4
    if pairs is None:
        pairs = list(itertools.combinations(cats, 2)) if small else []
    if triples is None:
        triples = list(itertools.combinations(cats, 3)) if small else []
    grid = [Strategy.make("S0", (), cats)]
    grid += [Strategy.make("S1", (c,), cats) for c in cats]
    grid += [Strategy.make("S2", p, cats) for p in pairs]
    grid += [Strategy.make("S3", t, cats) for t in triples]
    grid.append(Strategy.make("Sall", (), cats))
    return grid


def _run_row(args):
    ds, strategy, cfg, cache = args
    return run_strategy(ds, strategy, cfg, cache=cache)


def ablation_suite(
    ds: Dataset, cfg: Mapping[str, Any], categories: Sequence[str] | None = None,
    keep_results: bool = False,
) -> tuple[AblationReport, list[StrategyResult]]:
    """Run the strategy grid; rows follow grid order.  Repeated category subsets
    (other than S0) are run and flagged ``duplicate``."""
    cats = list(categories or ds.categories)
    pairs = cfgmod.parse_subsets(cfg["ablation.pairs"]) or None
    triples = cfgmod.parse_subsets(cfg["ablation.triples"]) or None
    grid = strategy_grid(cats, pairs, triples)

    cache: dict = {}
    # fill shared caches up front so worker processes do not recompute them
    if cfg["n2v.graph"] == "kg":
        embedding_table(ds, None, cfg, cache)
    if cfg["pseudo.source"] in ("baseline", "baseline_model"):
        cache["baseline"] = baseline_predictions(ds, cfg)

    workers = max(1, int(os.environ.get("GCNBOOST_THREADS", "1") or 1))
    jobs = [(ds, s, cfg, cache) for s in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_row, jobs))
    else:
        results = [_run_row(j) for j in jobs]

    rows, seen = [], set()
    for s, res in zip(grid, results):
        key = frozenset(s.categories)
        dup = s.tag != "S0" and key in seen
        if s.tag != "S0":
            seen.add(key)
        rows.append(ReportRow(s.tag, s.categories, res.metrics, dup))
    report = AblationReport(rows, tuple(ds.categories), cfg["seed"], cfgmod.fingerprint(cfg))
    return report, (results if keep_results else [])
