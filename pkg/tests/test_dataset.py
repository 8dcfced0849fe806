import struct

import numpy as np
import pytest

from gcnboost.dataset import (
    DataError,
    decode_matrix,
    encode_matrix,
    read_dataset,
    read_model,
    read_pseudo_csv,
    write_dataset,
    write_model,
)
from gcnboost.gcn_engine import GcnModel


def test_feature_header_layout():
    m = np.arange(6, dtype=np.float32).reshape(2, 3)
    blob = encode_matrix(m)
    assert blob[:4] == b"GBFT"
    assert struct.unpack("<III", blob[4:16]) == (2, 3, 0)
    assert np.array_equal(np.frombuffer(blob[16:], "<f4"), m.ravel())
    assert np.array_equal(decode_matrix(blob), m)


def test_feature_decode_errors():
    with pytest.raises(DataError, match="magic"):
        decode_matrix(b"XXXX" + bytes(12))
    with pytest.raises(DataError, match="header says"):
        decode_matrix(encode_matrix(np.ones((2, 2)))[:-4])


def test_model_roundtrip(tmp_path):
    m = GcnModel.glorot(5, 3, 4, seed=1)
    write_model(tmp_path / "m.gbmd", m)
    blob = (tmp_path / "m.gbmd").read_bytes()
    assert blob[:4] == b"GBMD" and struct.unpack("<III", blob[4:16]) == (5, 3, 4)
    back = read_model(tmp_path / "m.gbmd")
    for k, v in m.params().items():
        assert np.array_equal(back.params()[k], v.astype(np.float32))


def test_dataset_roundtrip(tmp_path, small_ds):
    write_dataset(small_ds, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert back.categories == small_ds.categories
    assert back.artworks == small_ds.artworks
    assert set(back.labels) == set(small_ds.labels)
    assert sorted(back.assignments) == sorted(small_ds.assignments)
    assert back.truth == small_ds.truth and back.pseudo == small_ds.pseudo
    assert np.array_equal(back.features, small_ds.features)
    assert back.kg.edges == small_ds.kg.edges


def test_write_is_byte_stable(tmp_path, small_ds):
    write_dataset(small_ds, tmp_path / "a")
    write_dataset(small_ds, tmp_path / "b")
    for name in ("nodes.csv", "edges.csv", "features.bin", "truth.csv", "pseudo.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_read_errors(tmp_path, small_ds):
    with pytest.raises(DataError, match="nodes.csv"):
        read_dataset(tmp_path)
    write_dataset(small_ds, tmp_path / "d")
    edges = tmp_path / "d" / "edges.csv"
    edges.write_text(edges.read_text() + "a00000,a00001,assignment\n")
    with pytest.raises(DataError, match="artwork and label"):
        read_dataset(tmp_path / "d")


def test_pseudo_csv(tmp_path):
    p = tmp_path / "pseudo.csv"
    p.write_text("node_id,category,value\nt1,Type,portrait\nt1,School,Dutch\n")
    assert read_pseudo_csv(p) == {"t1": {"Type": "portrait", "School": "Dutch"}}
    p.write_text("node,category\n")
    with pytest.raises(DataError, match="lacks columns"):
        read_pseudo_csv(p)
