"""Flat ``namespace.key = value`` run configuration and seed derivation."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import yaml

from gcnboost.embed_init import PROJECTIONS, SCHEMES, SkipGramParams, WalkParams
from gcnboost.gcn_engine import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "dataset": "",
    "out": "",
    "strategy": "Sall",
    "pseudo.source": "baseline",
    "refresh_every": 0,
    "filter": "",
    "n2v.p": 1.0,
    "n2v.q": 1.0,
    "n2v.walk_length": 40,
    "n2v.walks_per_node": 10,
    "n2v.graph": "kg",
    "sg.dim": 128,
    "sg.window": 5,
    "sg.negatives": 5,
    "sg.epochs": 5,
    "sg.lr": 0.025,
    "sg.batch_size": 1024,
    "init.scheme": "n2v_plus_random",
    "init.seed": -1,
    "init.projection": "seeded_random_projection",
    "gcn.hidden": 16,
    "gcn.lr": 0.001,
    "gcn.max_iterations": 2000,
    "gcn.patience": 100,
    "gcn.beta1": 0.9,
    "gcn.beta2": 0.999,
    "gcn.epsilon": 1e-8,
    "gcn.full_batch": True,
    "baseline.iterations": 300,
    "baseline.lr": 0.5,
    "baseline.l2": 1e-4,
    "ablation.pairs": "",
    "ablation.triples": "",
}

CHOICES = {
    "pseudo.source": ("baseline", "random", "ingested"),
    "n2v.graph": ("kg", "ekg"),
    "init.scheme": SCHEMES,
    "init.projection": PROJECTIONS,
}

POSITIVE = ("n2v.p", "n2v.q", "sg.lr", "gcn.lr", "baseline.lr", "gcn.hidden", "sg.dim",
            "sg.window", "sg.negatives", "sg.batch_size", "n2v.walks_per_node")
NON_NEGATIVE = ("refresh_every", "sg.epochs", "gcn.max_iterations", "gcn.patience",
                "baseline.iterations", "baseline.l2")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected an integer, got {value!r}") from None
        if f != int(f):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(f)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if isinstance(value, (list, tuple)):
        return ";".join(",".join(v) if isinstance(v, (list, tuple)) else str(v) for v in value)
    return "" if value is None else str(value)


def resolve_config(*layers: Mapping[str, Any] | None) -> dict[str, Any]:
    """Merge override layers over the defaults; later layers win."""
    cfg = dict(DEFAULTS)
    for layer in layers:
        for key, value in (layer or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(key, "unknown config key")
            cfg[key] = _coerce(key, value)
    for key, allowed in CHOICES.items():
        if cfg[key] not in allowed:
            raise ConfigError(key, f"must be one of {list(allowed)}, got {cfg[key]!r}")
    for key in POSITIVE:
        if not cfg[key] > 0:
            raise ConfigError(key, f"must be positive, got {cfg[key]!r}")
    for key in NON_NEGATIVE:
        if cfg[key] < 0:
            raise ConfigError(key, f"must be >= 0, got {cfg[key]!r}")
    if cfg["n2v.walk_length"] < 2:
        raise ConfigError("n2v.walk_length", "must be >= 2")
    if not cfg["gcn.full_batch"]:
        raise ConfigError("gcn.full_batch", "only full-batch training is supported")
    return cfg


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a flat YAML mapping (``key: value`` per line)."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config", "config file must be a flat mapping")
    return {str(k): v for k, v in data.items()}


def fingerprint(cfg: Mapping[str, Any]) -> str:
    """Short hash of the resolved config; paths are excluded so relocating data keeps it."""
    body = {k: v for k, v in sorted(cfg.items()) if k not in ("dataset", "out")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(seed: int, tag: str) -> int:
    """Per-purpose 63-bit seed: blake2b of ``"<seed>:<tag>"``."""
    h = hashlib.blake2b(f"{seed}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


def walk_params(cfg: Mapping[str, Any]) -> WalkParams:
    return WalkParams(
        p=cfg["n2v.p"], q=cfg["n2v.q"], walk_length=cfg["n2v.walk_length"],
        walks_per_node=cfg["n2v.walks_per_node"], seed=derive_seed(cfg["seed"], "n2v"),
    )


def skipgram_params(cfg: Mapping[str, Any]) -> SkipGramParams:
    return SkipGramParams(
        dim=cfg["sg.dim"], window=cfg["sg.window"], negatives_per_positive=cfg["sg.negatives"],
        epochs=cfg["sg.epochs"], learning_rate=cfg["sg.lr"], batch_size=cfg["sg.batch_size"],
        seed=derive_seed(cfg["seed"], "sg"),
    )


def train_config(cfg: Mapping[str, Any], category: str = "") -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["gcn.lr"], max_iterations=cfg["gcn.max_iterations"],
        patience=cfg["gcn.patience"], hidden=cfg["gcn.hidden"],
        adam_beta1=cfg["gcn.beta1"], adam_beta2=cfg["gcn.beta2"], adam_epsilon=cfg["gcn.epsilon"],
        seed=derive_seed(cfg["seed"], f"gcn:{category}"),
    )


def init_seed(cfg: Mapping[str, Any]) -> int:
    return cfg["init.seed"] if cfg["init.seed"] >= 0 else derive_seed(cfg["seed"], "init")


def parse_filters(spec: str) -> list[tuple[str, int]]:
    """``"Author:5"`` or ``"Author:5;School:2"`` -> [(category, min_degree)]."""
    out = []
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        cat, sep, num = part.rpartition(":")
        if not sep or not cat:
            raise ConfigError("filter", f"expected CATEGORY:MIN_DEGREE, got {part!r}")
        try:
            out.append((cat, int(num)))
        except ValueError:
            raise ConfigError("filter", f"bad minimum degree in {part!r}") from None
        if out[-1][1] < 0:
            raise ConfigError("filter", "minimum degree must be >= 0")
    return out


def parse_subsets(spec: str) -> list[tuple[str, ...]]:
    """``"School,Author;Type,TimeFrame"`` -> [("School", "Author"), ("Type", "TimeFrame")]."""
    return [
        tuple(c.strip() for c in part.split(",") if c.strip())
        for part in spec.split(";")
        if part.strip()
    ]
