"""Patch-embedding corpus: on-disk layout, ingestion, and retrieval.

A corpus directory holds one ``manifest.json`` plus one binary block per
(slide, level). Block layout: a fixed 32-byte header (magic, version,
dimension, row count, zero padding), then one row per patch of
little-endian float32 values ``[x, y, e_0 .. e_{d-1}]``. Grid coordinates
are stored as float32 but must hold exact non-negative integers.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, DimensionError, FormatError, NotFoundError

MAGIC = b"SLDXEMB1"
BLOCK_VERSION = 1
_HEADER = struct.Struct("<8sIII12x")  # magic, version, dim, rows; padded to 32 bytes
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
LEVELS = ("5x", "10x", "20x")


@dataclass(frozen=True)
class PatchRecord:
    """One embedded patch at a fixed grid position and magnification."""

    slide_id: str
    x: int
    y: int
    level: str
    embedding: np.ndarray  # float32, shape (d,)

    @property
    def ref(self) -> str:
        """Stable patch reference usable as an image id on the wire."""
        return f"{self.slide_id}:{self.level}:{self.x}:{self.y}"


@dataclass
class SlideManifest:
    slide_id: str
    counts: dict[str, int]           # level -> patch count
    pitch: dict[str, int] = field(default_factory=dict)  # level -> pixels per grid step

    def levels(self) -> list[str]:
        return sorted(self.counts)


def block_name(slide_id: str, level: str) -> str:
    return f"{slide_id}_{level}.emb"


def write_block(path: Path, coords: np.ndarray, embeddings: np.ndarray) -> None:
    """Write one (slide, level) block; rows are sorted by (y, x) first."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    embeddings = np.asarray(embeddings, dtype=np.float32)
    if embeddings.ndim != 2 or len(coords) != len(embeddings):
        raise DataError(f"{path.name}: coords/embedding row mismatch")
    order = np.lexsort((coords[:, 0], coords[:, 1]))
    coords = coords[order]
    embeddings = embeddings[order]
    rows, dim = embeddings.shape
    body = np.empty((rows, dim + 2), dtype="<f4")
    body[:, 0] = coords[:, 0]
    body[:, 1] = coords[:, 1]
    body[:, 2:] = embeddings
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, BLOCK_VERSION, dim, rows))
        fh.write(body.tobytes())


def read_block(path: Path, expected_dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read a block, returning (coords int64 (n,2), embeddings float32 (n,d))."""
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path.name}: truncated header ({len(raw)} bytes)")
    magic, version, dim, rows = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path.name}: bad magic {magic!r}")
    if version != BLOCK_VERSION:
        raise FormatError(f"{path.name}: unsupported block version {version}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionError(
            f"{path.name}: block declares d={dim}, manifest declares d={expected_dim}"
        )
    expected = _HEADER.size + rows * (dim + 2) * 4
    if len(raw) != expected:
        raise FormatError(f"{path.name}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, dim + 2)
    coords_f = body[:, :2]
    if rows and (not np.all(np.isfinite(coords_f)) or np.any(coords_f < 0)
                 or np.any(coords_f != np.floor(coords_f))):
        raise FormatError(f"{path.name}: coordinates must be non-negative integers")
    coords = coords_f.astype(np.int64)
    embeddings = np.ascontiguousarray(body[:, 2:])
    return coords, embeddings


class Corpus:
    """Read-only handle over an ingested corpus; safe for concurrent readers."""

    def __init__(self, path: Path, dim: int, provenance: str,
                 slides: dict[str, SlideManifest]):
        self.path = path
        self.dim = dim
        self.provenance = provenance
        self.slides = slides
        self._cache: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}

    def slide_ids(self) -> list[str]:
        return sorted(self.slides)

    def counts(self, slide_id: str) -> dict[str, int]:
        return dict(self._slide(slide_id).counts)

    def pitch(self, slide_id: str, level: str) -> int:
        return self._slide(slide_id).pitch.get(level, 0)

    def _slide(self, slide_id: str) -> SlideManifest:
        try:
            return self.slides[slide_id]
        except KeyError:
            raise NotFoundError(f"unknown slide {slide_id!r}") from None

    def fetch_arrays(self, slide_id: str, level: str) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates and embeddings for (slide, level), ordered by (y, x)."""
        manifest = self._slide(slide_id)
        if level not in manifest.counts:
            raise NotFoundError(f"slide {slide_id!r} has no level {level!r}")
        key = (slide_id, level)
        if key not in self._cache:
            coords, emb = read_block(self.path / block_name(slide_id, level), self.dim)
            order = np.lexsort((coords[:, 0], coords[:, 1]))
            self._cache[key] = (coords[order], emb[order])
        return self._cache[key]

    def fetch_patches(self, slide_id: str, level: str) -> list[PatchRecord]:
        coords, emb = self.fetch_arrays(slide_id, level)
        return [
            PatchRecord(slide_id, int(x), int(y), level, emb[i])
            for i, (x, y) in enumerate(coords)
        ]

    def iter_records(self) -> Iterator[PatchRecord]:
        for slide_id in self.slide_ids():
            for level in self._slide(slide_id).levels():
                yield from self.fetch_patches(slide_id, level)

    def total_records(self) -> int:
        return sum(sum(m.counts.values()) for m in self.slides.values())


def _validate_block(slide_id: str, level: str, coords: np.ndarray,
                    embeddings: np.ndarray) -> None:
    if len(coords):
        keys = coords[:, 1].astype(np.int64) << 32 | coords[:, 0].astype(np.int64)
        uniq, first = np.unique(keys, return_index=True)
        if len(uniq) != len(keys):
            dup = np.setdiff1d(np.arange(len(keys)), first)[0]
            x, y = coords[dup]
            raise DataError(f"{slide_id}:{level}: duplicate coordinate (x={x}, y={y})")
    bad = ~np.isfinite(embeddings)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0][0])
        x, y = coords[row]
        raise DataError(
            f"{slide_id}:{level}: non-finite embedding value at record "
            f"{slide_id}:{level}:{x}:{y}"
        )


def ingest_corpus(path: str | Path, check: bool = True) -> Corpus:
    """Open a corpus directory, validating structure, dimensions, and data."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"{path}: missing {MANIFEST_NAME}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{manifest_path}: unsupported format_version")
    dim = doc.get("dim")
    if not isinstance(dim, int) or dim <= 0:
        raise FormatError(f"{manifest_path}: dim must be a positive integer")

    slides: dict[str, SlideManifest] = {}
    for slide_id, entry in sorted(doc.get("slides", {}).items()):
        counts: dict[str, int] = {}
        pitch: dict[str, int] = {}
        for level, meta in entry.get("levels", {}).items():
            if level not in LEVELS:
                raise FormatError(f"{manifest_path}: unknown level tag {level!r}")
            counts[level] = int(meta["count"])
            pitch[level] = int(meta.get("pitch", 0))
        slides[slide_id] = SlideManifest(slide_id, counts, pitch)

    corpus = Corpus(path, dim, str(doc.get("provenance", "")), slides)
    if check:
        for slide_id, manifest in sorted(slides.items()):
            for level, count in sorted(manifest.counts.items()):
                coords, emb = read_block(path / block_name(slide_id, level), dim)
                if len(coords) != count:
                    raise DataError(
                        f"{slide_id}:{level}: manifest declares {count} records, "
                        f"block holds {len(coords)}"
                    )
                _validate_block(slide_id, level, coords, emb)
    return corpus


def write_corpus(path: str | Path, dim: int,
                 slides: Mapping[str, Mapping[str, tuple[Sequence, Sequence]]],
                 pitch: Mapping[str, Mapping[str, int]] | None = None,
                 provenance: str = "") -> Path:
    """Write a corpus directory from in-memory (coords, embeddings) pairs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format_version": MANIFEST_VERSION,
        "dim": dim,
        "provenance": provenance,
        "slides": {},
    }
    for slide_id in sorted(slides):
        levels_doc = {}
        for level in sorted(slides[slide_id]):
            coords, emb = slides[slide_id][level]
            emb = np.asarray(emb, dtype=np.float32)
            if emb.shape[1] != dim:
                raise DimensionError(
                    f"{slide_id}:{level}: embeddings have d={emb.shape[1]}, corpus d={dim}"
                )
            write_block(path / block_name(slide_id, level), np.asarray(coords), emb)
            levels_doc[level] = {
                "count": len(emb),
                "pitch": (pitch or {}).get(slide_id, {}).get(level, 0),
            }
        manifest["slides"][slide_id] = {"levels": levels_doc}
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
