"""Dataset container and on-disk formats.

A dataset directory holds::

    nodes.csv     id,kind,split,category,value,feature_ref
    edges.csv     src_id,dst_id,kind            (kind = assignment | link)
    features.bin  "GBFT" u32 rows u32 cols u32 reserved, then f32 LE row-major
    truth.csv     node_id,category,value        (test ground truth)
    pseudo.csv    node_id,category,value        (optional ingested pseudo-labels)
"""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from gcnboost.graph_core import ArtworkNode, KnowledgeGraph, build_kg

FEATURE_MAGIC = b"GBFT"
MODEL_MAGIC = b"GBMD"
DATASET_FILES = ("nodes.csv", "edges.csv", "features.bin", "pseudo.csv", "truth.csv")


class DataError(ValueError):
    """Malformed or missing dataset content."""


@dataclass(frozen=True)
class Dataset:
    categories: tuple[str, ...]
    artworks: tuple[ArtworkNode, ...]
    labels: tuple[tuple[str, str], ...]
    assignments: tuple[tuple[str, str, str], ...]
    links: tuple[tuple[tuple[str, str], tuple[str, str]], ...]
    features: np.ndarray
    truth: Mapping[str, Mapping[str, str]]
    pseudo: Mapping[str, Mapping[str, str]] | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    @cached_property
    def kg(self) -> KnowledgeGraph:
        known = [a for a in self.artworks if a.split != "test"]
        return build_kg(known, self.assignments, self.links, self.categories, self.labels)

    @property
    def test_artworks(self) -> list[ArtworkNode]:
        return [a for a in self.artworks if a.split == "test"]

    def split(self, name: str) -> list[ArtworkNode]:
        return [a for a in self.artworks if a.split == name]

    @cached_property
    def known_labels(self) -> dict[str, dict[str, str]]:
        """Ground truth of train/validation artworks: name -> category -> value."""
        out: dict[str, dict[str, str]] = {}
        for art, cat, value in self.assignments:
            out.setdefault(art, {})[cat] = value
        return out

    def feature_rows(self, artworks) -> np.ndarray:
        refs = []
        for a in artworks:
            if a.feature_ref is None:
                raise DataError(f"artwork {a.name!r} has no feature_ref")
            refs.append(a.feature_ref)
        return np.asarray(self.features, dtype=np.float64)[refs]


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def encode_matrix(matrix: np.ndarray, magic: bytes = FEATURE_MAGIC) -> bytes:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise DataError("feature matrix must be 2-D")
    return magic + struct.pack("<III", m.shape[0], m.shape[1], 0) + m.tobytes()


def decode_matrix(data: bytes, magic: bytes = FEATURE_MAGIC) -> np.ndarray:
    if len(data) < 16 or data[:4] != magic:
        raise DataError(f"bad feature header, expected magic {magic!r}")
    rows, cols, _ = struct.unpack("<III", data[4:16])
    body = data[16:]
    if len(body) != rows * cols * 4:
        raise DataError(f"feature body has {len(body)} bytes, header says {rows}x{cols}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)


def write_features(path: Path, matrix: np.ndarray) -> None:
    atomic_write_bytes(path, encode_matrix(matrix))


def read_features(path: Path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def write_model(path: Path, model) -> None:
    """Checkpoint: "GBMD", u32 d, h, k, then W1, b1, W2, b2 as f32 LE row-major."""
    d, h, k = model.dims
    body = b"".join(
        np.ascontiguousarray(getattr(model, name), dtype="<f4").tobytes()
        for name in ("W1", "b1", "W2", "b2")
    )
    atomic_write_bytes(path, MODEL_MAGIC + struct.pack("<III", d, h, k) + body)


def read_model(path: Path):
    from gcnboost.gcn_engine import GcnModel

    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise DataError("bad model checkpoint magic")
    d, h, k = struct.unpack("<III", data[4:16])
    flat = np.frombuffer(data[16:], dtype="<f4").astype(np.float64)
    sizes = [d * h, h, h * k, k]
    if len(flat) != sum(sizes):
        raise DataError("checkpoint size does not match its dims")
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return GcnModel(parts[0].reshape(d, h), parts[1], parts[2].reshape(h, k), parts[3])


def _label_rows(labels: Mapping[str, Mapping[str, str]]):
    return [(name, cat, value) for name in labels for cat, value in labels[name].items()]


def write_dataset(ds: Dataset, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    label_id = {lab: f"l{i:05d}" for i, lab in enumerate(ds.labels)}
    node_rows = [
        (a.name, "artwork", a.split, "", "", "" if a.feature_ref is None else a.feature_ref)
        for a in ds.artworks
    ]
    node_rows += [(label_id[lab], "label", "", lab[0], lab[1], "") for lab in ds.labels]
    edge_rows = [(art, label_id[(cat, value)], "assignment") for art, cat, value in ds.assignments]
    edge_rows += [(label_id[tuple(a)], label_id[tuple(b)], "link") for a, b in ds.links]
    atomic_write_text(out / "nodes.csv", csv_text(("id", "kind", "split", "category", "value", "feature_ref"), node_rows))
    atomic_write_text(out / "edges.csv", csv_text(("src_id", "dst_id", "kind"), edge_rows))
    write_features(out / "features.bin", ds.features)
    atomic_write_text(out / "truth.csv", csv_text(("node_id", "category", "value"), _label_rows(ds.truth)))
    if ds.pseudo is not None:
        atomic_write_text(out / "pseudo.csv", csv_text(("node_id", "category", "value"), _label_rows(ds.pseudo)))


def _read_csv(path: Path, required: tuple[str, ...]) -> list[dict[str, str]]:
    if not path.exists():
        raise DataError(f"missing {path.name} in {path.parent}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path.name} lacks columns {sorted(missing)}")
        return list(reader)


def read_pseudo_csv(path: Path) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for row in _read_csv(Path(path), ("node_id", "category", "value")):
        out.setdefault(row["node_id"], {})[row["category"]] = row["value"]
    return out


def read_dataset(root: Path) -> Dataset:
    root = Path(root)
    nodes = _read_csv(root / "nodes.csv", ("id", "kind", "split", "category", "value", "feature_ref"))
    artworks, labels, label_by_id, categories = [], [], {}, []
    for row in nodes:
        if row["kind"] == "artwork":
            ref = row["feature_ref"].strip()
            try:
                artworks.append(ArtworkNode(row["id"], row["split"], int(ref) if ref else None))
            except ValueError as exc:
                raise DataError(str(exc)) from None
        elif row["kind"] == "label":
            lab = (row["category"], row["value"])
            if row["category"] not in categories:
                categories.append(row["category"])
            label_by_id[row["id"]] = lab
            labels.append(lab)
        else:
            raise DataError(f"node {row['id']!r} has unknown kind {row['kind']!r}")
    names = {a.name for a in artworks}

    assignments, links = [], []
    for row in _read_csv(root / "edges.csv", ("src_id", "dst_id", "kind")):
        src, dst = row["src_id"], row["dst_id"]
        if row["kind"] == "assignment":
            if src in label_by_id:
                src, dst = dst, src
            if src not in names or dst not in label_by_id:
                raise DataError(f"assignment edge {row['src_id']}-{row['dst_id']} must join artwork and label")
            cat, value = label_by_id[dst]
            assignments.append((src, cat, value))
        elif row["kind"] == "link":
            if src not in label_by_id or dst not in label_by_id:
                raise DataError(f"link edge {src}-{dst} must join two labels")
            links.append((label_by_id[src], label_by_id[dst]))
        else:
            raise DataError(f"edge {src}-{dst} has unknown kind {row['kind']!r}")

    features = read_features(root / "features.bin") if (root / "features.bin").exists() else np.zeros((0, 0), np.float32)
    for a in artworks:
        if a.feature_ref is not None and a.feature_ref >= len(features):
            raise DataError(f"artwork {a.name!r} feature_ref {a.feature_ref} out of range")
    truth = read_pseudo_csv(root / "truth.csv") if (root / "truth.csv").exists() else {}
    pseudo = read_pseudo_csv(root / "pseudo.csv") if (root / "pseudo.csv").exists() else None
    return Dataset(
        categories=tuple(categories),
        artworks=tuple(artworks),
        labels=tuple(labels),
        assignments=tuple(assignments),
        links=tuple(links),
        features=features,
        truth=truth,
        pseudo=pseudo,
    )
