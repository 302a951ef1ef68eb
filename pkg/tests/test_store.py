import json
import struct

import numpy as np
import pytest

from slidedx.errors import DataError, DimensionError, FormatError, NotFoundError
from slidedx.store import (
    block_name,
    ingest_corpus,
    read_block,
    write_corpus,
)


def make_corpus(tmp_path, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    slides = {
        "s1": {"10x": (np.array([[0, 0], [1, 0], [0, 1], [1, 1]]),
                       rng.normal(size=(4, dim)).astype(np.float32))},
        "s2": {"10x": (np.array([[0, 0], [1, 0]]),
                       rng.normal(size=(2, dim)).astype(np.float32)),
               "20x": (np.array([[0, 0], [1, 0], [2, 0]]),
                       rng.normal(size=(3, dim)).astype(np.float32))},
        "s3": {"5x": (np.array([[0, 0]]),
                      rng.normal(size=(1, dim)).astype(np.float32))},
    }
    return write_corpus(tmp_path / "corpus", dim, slides, provenance="test"), slides


def test_ingest_counts(tmp_path):
    path, _ = make_corpus(tmp_path)
    corpus = ingest_corpus(path)
    assert corpus.counts("s1") == {"10x": 4}
    assert corpus.dim == 8


def test_dimension_mismatch(tmp_path):
    path, _ = make_corpus(tmp_path)
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["dim"] = 16
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DimensionError):
        ingest_corpus(path)


def test_iteration_matches_independent_reader(tmp_path):
    path, slides = make_corpus(tmp_path)
    corpus = ingest_corpus(path)

    # Independent reader: raw struct walk over every block file.
    header = struct.Struct("<8sIII12x")
    independent = 0
    for slide_id, levels in slides.items():
        for level in levels:
            raw = (path / block_name(slide_id, level)).read_bytes()
            _, _, dim, rows = header.unpack_from(raw)
            assert len(raw) == header.size + rows * (dim + 2) * 4
            independent += rows

    assert corpus.total_records() == independent == sum(
        len(emb) for levels in slides.values() for _, emb in levels.values()
    )
    assert sum(1 for _ in corpus.iter_records()) == independent


def test_fetch_sorted_and_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    coords = np.array([[2, 1], [0, 0], [1, 1], [1, 0]])
    emb = rng.normal(size=(4, 4)).astype(np.float32)
    path = write_corpus(tmp_path / "c", 4, {"s": {"10x": (coords, emb)}})
    corpus = ingest_corpus(path)
    records = corpus.fetch_patches("s", "10x")
    assert [(r.y, r.x) for r in records] == [(0, 0), (0, 1), (1, 1), (1, 2)]
    again = corpus.fetch_patches("s", "10x")
    assert all(a.embedding.tobytes() == b.embedding.tobytes()
               for a, b in zip(records, again))


def test_unknown_slide_and_level(tmp_path):
    path, _ = make_corpus(tmp_path)
    corpus = ingest_corpus(path)
    with pytest.raises(NotFoundError):
        corpus.fetch_patches("nope", "10x")
    with pytest.raises(NotFoundError):
        corpus.fetch_patches("s1", "20x")


def test_round_trip_bit_identical(tmp_path):
    path, _ = make_corpus(tmp_path, seed=7)
    corpus = ingest_corpus(path)
    rewritten = write_corpus(
        tmp_path / "copy",
        corpus.dim,
        {
            sid: {
                level: corpus.fetch_arrays(sid, level)
                for level in corpus.slides[sid].levels()
            }
            for sid in corpus.slide_ids()
        },
        provenance=corpus.provenance,
    )
    for sid in corpus.slide_ids():
        for level in corpus.slides[sid].levels():
            original = (path / block_name(sid, level)).read_bytes()
            copy = (rewritten / block_name(sid, level)).read_bytes()
            assert original == copy


def test_non_finite_rejected(tmp_path):
    emb = np.ones((2, 4), dtype=np.float32)
    emb[1, 2] = np.nan
    path = write_corpus(tmp_path / "c", 4, {"s": {"10x": (np.array([[0, 0], [1, 0]]), emb)}})
    with pytest.raises(DataError, match="s:10x:1:0"):
        ingest_corpus(path)


def test_duplicate_coordinates_rejected(tmp_path):
    emb = np.ones((2, 4), dtype=np.float32)
    path = write_corpus(tmp_path / "c", 4, {"s": {"10x": (np.array([[1, 1], [1, 1]]), emb)}})
    with pytest.raises(DataError, match="duplicate"):
        ingest_corpus(path)


def test_bad_magic(tmp_path):
    path, _ = make_corpus(tmp_path)
    block = path / block_name("s1", "10x")
    raw = bytearray(block.read_bytes())
    raw[:4] = b"XXXX"
    block.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        read_block(block)


def test_truncated_block(tmp_path):
    path, _ = make_corpus(tmp_path)
    block = path / block_name("s1", "10x")
    block.write_bytes(block.read_bytes()[:40])
    with pytest.raises(FormatError):
        ingest_corpus(path)


def test_count_mismatch(tmp_path):
    path, _ = make_corpus(tmp_path)
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["slides"]["s1"]["levels"]["10x"]["count"] = 5
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError, match="declares 5"):
        ingest_corpus(path)


def test_write_block_rejects_mixed_dim(tmp_path):
    with pytest.raises(DimensionError):
        write_corpus(tmp_path / "c", 8,
                     {"s": {"10x": (np.array([[0, 0]]), np.ones((1, 4), np.float32))}})
