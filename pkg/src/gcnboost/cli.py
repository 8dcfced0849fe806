"""Command line: ``gcnboost {generate,ablate,train,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from gcnboost import config as cfgmod
from gcnboost.config import ConfigError
from gcnboost.dataset import (
    DataError,
    atomic_write_text,
    csv_text,
    read_dataset,
    write_dataset,
    write_features,
    write_model,
)
from gcnboost.embed_init import EmbeddingError
from gcnboost.gcn_engine import GcnError, NonFiniteError
from gcnboost.graph_core import SOURCES, ExtendedKG, GraphError, degree_histogram, extend_kg
from gcnboost.pipeline import (
    StrategyError,
    StrategyResult,
    Strategy,
    ablation_suite,
    embedding_table,
    pseudo_assignment,
    run_strategy,
)
from gcnboost.synth import PRESETS, SpecError, SyntheticSpec, generate_synthetic

log = logging.getLogger("gcnboost")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcnboost", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset directory")
    g.add_argument("--config", help="YAML synthetic spec (may name a preset)")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    for name, text in (("ablate", "run the strategy grid"), ("train", "train one strategy"),
                       ("report", "degree histograms / print an ablation report")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="flat YAML run config")
        s.add_argument("--dataset")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--strategy", help="TAG[:cat1,cat2], e.g. S2:School,Author")
        s.add_argument("--refresh-every", type=int, dest="refresh_every")
        s.add_argument("--filter", action="append", help="CATEGORY:MIN_DEGREE (repeatable)")
    return p


def _run_config(args) -> dict[str, Any]:
    layer = cfgmod.load_config_file(args.config) if args.config else {}
    flags = {}
    for key in ("dataset", "out", "seed", "strategy", "refresh_every"):
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = value
    if getattr(args, "filter", None):
        flags["filter"] = ";".join(args.filter)
    cfg = cfgmod.resolve_config(layer, flags)
    cfgmod.parse_filters(cfg["filter"])
    return cfg


def _need(cfg, key: str) -> Path:
    if not cfg[key]:
        raise ConfigError(key, f"--{key} (or '{key}' in the config) is required")
    return Path(cfg[key])


def degree_rows(ekg: ExtendedKG) -> list[tuple]:
    rows = []
    for cat in ekg.categories:
        for src in SOURCES:
            for deg, count in degree_histogram(ekg, cat, src).buckets.items():
                rows.append((cat, deg, count, src))
    return rows


def _dump_embeddings(path: Path, keys, matrix) -> None:
    write_features(path.with_suffix(".bin"), matrix)
    rows = [(i, *k) if len(k) == 3 else (i, k[0], "", k[1]) for i, k in enumerate(keys)]
    atomic_write_text(path.with_suffix(".csv"), csv_text(("row", "kind", "category", "id_or_value"), rows))


def _strategy_slug(s: Strategy) -> str:
    return s.tag if s.tag in ("S0", "Sall") else f"{s.tag}_{s.describe().replace('+', '_')}"


def cmd_generate(args) -> int:
    data = {}
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise SpecError("spec", "spec file must be a mapping")
        data.update(raw)
    if args.preset:
        data.setdefault("preset", args.preset)
    if args.seed is not None:
        data["seed"] = args.seed
    if not data:
        raise SpecError("spec", "give --config or --preset")
    spec = SyntheticSpec.from_dict(data)
    ds = generate_synthetic(spec)
    write_dataset(ds, Path(args.out))
    log.info("wrote %d artworks to %s", len(ds.artworks), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    ds = read_dataset(_need(cfg, "dataset"))
    out = _need(cfg, "out")
    report, results = ablation_suite(ds, cfg, keep_results=True)
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "report.csv", report.to_csv())
    sall = next(r for r in results if r.strategy.tag == "Sall")
    atomic_write_text(out / "degree_histograms.csv",
                      csv_text(("category", "degree", "count", "sources"), degree_rows(sall.ekg)))
    if cfg["n2v.graph"] == "kg":
        table = embedding_table(ds, None, cfg, {})
        _dump_embeddings(out / "embeddings" / "node2vec", table.keys, table.vectors)
    for res in results:
        _dump_embeddings(out / "embeddings" / _strategy_slug(res.strategy), res.ekg.keys, res.hidden())
    for row in report.rows:
        log.info("%-5s %-32s %s", row.tag, "+".join(sorted(row.categories)), row.metrics.per_category)
    return EXIT_OK


def _write_training(out: Path, res: StrategyResult) -> None:
    for cat, model in res.models.items():
        write_model(out / f"model_{cat}.gbmd", model)
        h = res.histories[cat]
        rows = [(i + 1, repr(t), repr(v)) for i, (t, v) in enumerate(zip(h.train_loss, h.val_loss))]
        atomic_write_text(out / f"history_{cat}.csv", csv_text(("iteration", "train_loss", "val_loss"), rows))
    body = {
        "strategy": res.strategy.tag,
        "categories": sorted(res.strategy.categories),
        "accuracy": res.metrics.per_category,
        "counts": res.metrics.counts,
        "correct": res.metrics.correct,
        "stopped_at": {c: h.stopped_at for c, h in res.histories.items()},
        "best_val_loss": {c: h.best_val_loss for c, h in res.histories.items()},
        "excluded": {c: sorted(v) for c, v in res.excluded.items()},
    }
    atomic_write_text(out / "metrics.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = read_dataset(_need(cfg, "dataset"))
    out = _need(cfg, "out")
    strategy = Strategy.parse(cfg["strategy"], ds.categories)
    res = run_strategy(ds, strategy, cfg)
    _write_training(out, res)
    log.info("%s %s", strategy.tag, res.metrics.per_category)
    return EXIT_OK


def format_report(report: dict) -> str:
    cats = report["categories"]
    lines = [f"{'model':<42}" + "".join(f"{c:>11}" for c in cats)]
    for row in report["rows"]:
        name = f"{row['tag']} {'_'.join(row['categories'])}" if row["tag"] not in ("S0", "Sall") else row["tag"]
        cells = "".join(
            f"{'-':>11}" if row["accuracy"][c] is None else f"{row['accuracy'][c]:>11.3f}" for c in cats
        )
        lines.append(f"{name + (' (dup)' if row['duplicate'] else ''):<42}{cells}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    cfg = _run_config(args)
    out = _need(cfg, "out")
    if cfg["dataset"]:
        ds = read_dataset(Path(cfg["dataset"]))
        strategy = Strategy.parse(cfg["strategy"], ds.categories)
        ekg = extend_kg(ds.kg, ds.test_artworks, pseudo_assignment(ds, strategy, cfg["pseudo.source"], cfg))
        text = csv_text(("category", "degree", "count", "sources"), degree_rows(ekg))
        atomic_write_text(out / "degree_histograms.csv", text)
        print(text, end="")
        return EXIT_OK
    path = out / "report.json"
    if not path.exists():
        raise DataError(f"no report.json in {out}; pass --dataset to compute degree histograms")
    print(format_report(json.loads(path.read_text(encoding="utf-8"))))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "ablate": cmd_ablate, "train": cmd_train, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SpecError, StrategyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc} (iteration {exc.iteration})", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, GraphError, EmbeddingError, GcnError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
