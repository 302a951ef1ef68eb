"""Prototype-based slide highlighting.

Covers the full retrieval pipeline: prototype construction from reference
embeddings, task toolkits, patch-vs-prototype cosine similarity, region
grounding (per-patch argmax over descriptions), entity localization
(per-description top-k), diversity-aware RoI sampling, seeded K-means
prototype augmentation, and the pattern-area map used for grading.

All operations are pure functions of their inputs. Similarity is computed
in float64, blocked over patch rows; the summation order inside each dot
product does not depend on the block size.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    EmptyHighlightError,
    EmptySupportError,
    InsufficientSupportError,
    NotFoundError,
    NoTumorError,
    ZeroNormError,
)
from .store import Corpus, read_block, write_block

GROUNDING = "grounding"
LOCALIZATION = "localization"

_SIM_BLOCK_ROWS = 8192  # tuning constant, not observable in results


# ---------------------------------------------------------------------------
# prototypes and toolkits


@dataclass(frozen=True)
class Prototype:
    """Mean embedding of a support set for one morphological description."""

    description: str
    level: str
    vector: np.ndarray          # float64, shape (d,)
    support_ids: tuple[str, ...]
    category: str
    augmented: bool = False     # True for K-means sub-prototypes

    def __post_init__(self):
        if len(self.support_ids) < 1:
            raise EmptySupportError(f"prototype {self.description!r} has no support")


@dataclass
class Toolkit:
    """Ordered prototype set for one task plus its highlighted subset."""

    name: str
    mode: str
    prototypes: list[Prototype]
    highlight: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.mode not in (GROUNDING, LOCALIZATION):
            raise ConfigError(f"toolkit {self.name!r}: unknown mode {self.mode!r}")
        dims = {p.vector.shape[0] for p in self.prototypes}
        if len(dims) > 1:
            raise DimensionError(f"toolkit {self.name!r}: mixed prototype dimensions {dims}")
        descriptions = [p.description for p in self.prototypes]
        if len(set(descriptions)) != len(descriptions):
            raise ConfigError(f"toolkit {self.name!r}: duplicate descriptions")
        unknown = set(self.highlight) - set(descriptions)
        if unknown:
            raise ConfigError(f"toolkit {self.name!r}: highlight names unknown {unknown}")

    @property
    def dim(self) -> int:
        return self.prototypes[0].vector.shape[0]

    @property
    def descriptions(self) -> list[str]:
        return [p.description for p in self.prototypes]

    @property
    def categories(self) -> list[str]:
        seen: list[str] = []
        for p in self.prototypes:
            if p.category not in seen:
                seen.append(p.category)
        return seen

    def matrix(self) -> np.ndarray:
        return np.stack([p.vector for p in self.prototypes]).astype(np.float64)

    def at_level(self, level: str) -> "Toolkit":
        """Sub-toolkit restricted to prototypes built at one magnification."""
        protos = [p for p in self.prototypes if p.level == level]
        if not protos:
            raise NotFoundError(f"toolkit {self.name!r} has no prototypes at {level}")
        names = {p.description for p in protos}
        return Toolkit(self.name, self.mode, protos,
                       frozenset(h for h in self.highlight if h in names))

    def levels(self) -> list[str]:
        seen: list[str] = []
        for p in self.prototypes:
            if p.level not in seen:
                seen.append(p.level)
        return seen

    def support_ids_for_category(self, category: str) -> list[str]:
        ids: list[str] = []
        for p in self.prototypes:
            if p.category == category:
                for sid in p.support_ids:
                    if sid not in ids:
                        ids.append(sid)
        return ids


def build_prototype(refs: Sequence[np.ndarray] | np.ndarray, description: str,
                    level: str, category: str,
                    support_ids: Sequence[str] | None = None,
                    normalize_support: bool = False,
                    augmented: bool = False) -> Prototype:
    """Average a support set into one prototype vector (no normalization
    of the mean; ``normalize_support`` optionally unit-scales each ref first)."""
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 1:
        refs = refs[None, :]
    if refs.size == 0 or refs.shape[0] == 0:
        raise EmptySupportError(f"prototype {description!r}: empty support set")
    if refs.ndim != 2:
        raise DimensionError(f"prototype {description!r}: support vectors of mixed shape")
    if normalize_support:
        norms = np.linalg.norm(refs, axis=1)
        if np.any(norms == 0):
            raise ZeroNormError(f"prototype {description!r}: zero-norm support vector")
        refs = refs / norms[:, None]
    vector = refs.mean(axis=0)
    ids = tuple(support_ids) if support_ids is not None else tuple(
        f"{description}#{i}" for i in range(refs.shape[0]))
    return Prototype(description, level, vector, ids, category, augmented)


# ---------------------------------------------------------------------------
# similarity


@dataclass
class SimilarityMatrix:
    """Cosine similarity of N patches against T prototypes."""

    values: np.ndarray  # float64, shape (N, T)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]


def _as_embedding_matrix(patches) -> tuple[np.ndarray, list[str]]:
    if isinstance(patches, np.ndarray):
        emb = patches
        labels = [f"row {i}" for i in range(emb.shape[0])]
        return emb, labels
    emb = np.stack([p.embedding for p in patches]) if len(patches) else np.empty((0, 0))
    labels = [getattr(p, "ref", f"row {i}") for i, p in enumerate(patches)]
    return emb, labels


def similarity_matrix(patches, toolkit: Toolkit,
                      block_rows: int = _SIM_BLOCK_ROWS) -> SimilarityMatrix:
    """S[n, t] = cos(embedding_n, prototype_t), computed in float64."""
    emb, labels = _as_embedding_matrix(patches)
    protos = toolkit.matrix()
    if emb.shape[0] and emb.shape[1] != protos.shape[1]:
        raise DimensionError(
            f"patch dimension {emb.shape[1]} != prototype dimension {protos.shape[1]}")

    pnorm = np.linalg.norm(protos, axis=1)
    zero = np.where(pnorm == 0)[0]
    if len(zero):
        raise ZeroNormError(
            f"zero-norm prototype {toolkit.prototypes[int(zero[0])].description!r}")
    unit_protos = protos / pnorm[:, None]

    n = emb.shape[0]
    out = np.empty((n, protos.shape[0]), dtype=np.float64)
    for start in range(0, n, block_rows):
        block = emb[start:start + block_rows].astype(np.float64)
        norms = np.linalg.norm(block, axis=1)
        zero = np.where(norms == 0)[0]
        if len(zero):
            raise ZeroNormError(f"zero-norm embedding at {labels[start + int(zero[0])]}")
        out[start:start + block_rows] = (block / norms[:, None]) @ unit_protos.T
    return SimilarityMatrix(out)


# ---------------------------------------------------------------------------
# region grounding and RoI selection


@dataclass
class GroundingResult:
    """Per-patch description assignment plus the highlighted patch set."""

    assignments: np.ndarray       # int, shape (N,): prototype index per patch
    highlighted: np.ndarray       # int indices of patches in the highlight set

    def description_of(self, toolkit: Toolkit, patch_index: int) -> str:
        return toolkit.prototypes[int(self.assignments[patch_index])].description


def ground_regions(sim: SimilarityMatrix, toolkit: Toolkit) -> GroundingResult:
    """Assign each patch to its argmax description; ties go to the lowest
    prototype index. Highlighted patches are those whose description is in
    the toolkit's highlight set."""
    if toolkit.mode != GROUNDING:
        raise ConfigError(f"toolkit {toolkit.name!r} is not a grounding toolkit")
    if not toolkit.highlight:
        raise ConfigError(f"toolkit {toolkit.name!r} has an empty highlight set")
    assignments = np.argmax(sim.values, axis=1)
    highlight_cols = np.array(
        [i for i, p in enumerate(toolkit.prototypes) if p.description in toolkit.highlight])
    highlighted = np.where(np.isin(assignments, highlight_cols))[0]
    return GroundingResult(assignments, highlighted)


@dataclass(frozen=True)
class RoiEntry:
    """One selected patch: grid position, magnification, score, provenance."""

    x: int
    y: int
    level: str
    score: float | None
    provenance: str  # topk | random | kmeans

    def ref(self, slide_id: str) -> str:
        return f"{slide_id}:{self.level}:{self.x}:{self.y}"


@dataclass
class RoiSelection:
    plan_name: str
    entries: list[RoiEntry] = field(default_factory=list)
    shortfall: bool = False
    clipped: bool = False

    def refs(self, slide_id: str) -> list[str]:
        return [e.ref(slide_id) for e in self.entries]


def _highlight_columns(toolkit: Toolkit) -> np.ndarray:
    cols = [i for i, p in enumerate(toolkit.prototypes) if p.description in toolkit.highlight]
    if not cols:
        raise ConfigError(f"toolkit {toolkit.name!r} has an empty highlight set")
    return np.array(cols)


def _entry(coords: np.ndarray, level: str, idx: int, score, provenance: str) -> RoiEntry:
    x, y = coords[idx]
    return RoiEntry(int(x), int(y), level,
                    float(score) if score is not None else None, provenance)


def select_rois_region(highlighted: np.ndarray, sim: SimilarityMatrix,
                       toolkit: Toolkit, coords: np.ndarray, level: str,
                       k_top: int, k_random: int,
                       rng: np.random.Generator,
                       plan_name: str = "region") -> RoiSelection:
    """Top-k by max-over-highlight-prototype similarity, then a seeded
    uniform draw (without replacement) from the remaining highlighted
    patches. Degrades to all of the highlighted set when it is too small."""
    highlighted = np.asarray(highlighted, dtype=np.int64)
    if highlighted.size == 0:
        raise EmptyHighlightError("no highlighted patches to sample from")
    cols = _highlight_columns(toolkit)
    scores = sim.values[np.ix_(highlighted, cols)].max(axis=1)
    order = np.lexsort((highlighted, -scores))

    selection = RoiSelection(plan_name)
    n_top = min(k_top, len(highlighted))
    for pos in order[:n_top]:
        selection.entries.append(
            _entry(coords, level, int(highlighted[pos]), scores[pos], "topk"))

    remainder = order[n_top:]
    n_random = min(k_random, len(remainder))
    if n_random:
        picks = rng.choice(len(remainder), size=n_random, replace=False)
        for pos in sorted(remainder[picks].tolist()):
            selection.entries.append(
                _entry(coords, level, int(highlighted[pos]), scores[pos], "random"))
    if len(highlighted) < k_top + k_random:
        selection.shortfall = True
    return selection


def localize_entities(sim: SimilarityMatrix, toolkit: Toolkit, k: int,
                      coords: np.ndarray, level: str) -> dict[str, RoiSelection]:
    """Per-description top-k patches by similarity column; ties go to the
    lowest patch index. k larger than N clips to N and flags the selection."""
    if toolkit.mode != LOCALIZATION:
        raise ConfigError(f"toolkit {toolkit.name!r} is not a localization toolkit")
    if k < 1:
        raise ConfigError("localization requires k >= 1")
    n = sim.n
    clipped = k > n
    k_eff = min(k, n)
    out: dict[str, RoiSelection] = {}
    indices = np.arange(n)
    for col, proto in enumerate(toolkit.prototypes):
        column = sim.values[:, col]
        order = np.lexsort((indices, -column))[:k_eff]
        selection = RoiSelection(f"top{k}:{proto.description}", clipped=clipped)
        for idx in order:
            selection.entries.append(_entry(coords, level, int(idx), column[idx], "topk"))
        out[proto.description] = selection
    return out


def select_rois_augmented(sim: SimilarityMatrix, toolkit: Toolkit,
                          coords: np.ndarray, level: str, k: int,
                          exclude: Iterable[tuple[int, int]] = (),
                          plan_name: str = "kmeans") -> RoiSelection:
    """Top-k patches by max similarity over the K-means sub-prototype
    columns, skipping already-selected grid positions."""
    cols = [i for i, p in enumerate(toolkit.prototypes) if p.augmented]
    if not cols:
        raise ConfigError(f"toolkit {toolkit.name!r} has no augmented sub-prototypes")
    scores = sim.values[:, cols].max(axis=1)
    order = np.lexsort((np.arange(sim.n), -scores))
    taken = set(exclude)
    selection = RoiSelection(plan_name)
    for idx in order:
        if len(selection.entries) == k:
            break
        pos = (int(coords[idx][0]), int(coords[idx][1]))
        if pos in taken:
            continue
        taken.add(pos)
        selection.entries.append(_entry(coords, level, int(idx), scores[idx], "kmeans"))
    if len(selection.entries) < k:
        selection.shortfall = True
    return selection


# ---------------------------------------------------------------------------
# K-means augmentation


def kmeans(members: np.ndarray, k: int, rng: np.random.Generator,
           max_iters: int = 100, tol: float = 1e-6):
    """Seeded k-means++ initialization followed by Lloyd iterations.

    Returns (centroids, labels, wcss_history); the history is used to check
    that the within-cluster sum of squares never increases.
    """
    members = np.asarray(members, dtype=np.float64)
    n = members.shape[0]
    if n < k:
        raise InsufficientSupportError(f"{n} members cannot form {k} clusters")

    centroids = np.empty((k, members.shape[1]))
    centroids[0] = members[rng.integers(n)]
    dist2 = ((members - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total == 0:
            centroids[j] = members[rng.integers(n)]
        else:
            centroids[j] = members[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, ((members - centroids[j]) ** 2).sum(axis=1))

    wcss_history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((members[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        wcss = float(d2[np.arange(n), labels].sum())
        wcss_history.append(wcss)
        new_centroids = centroids.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centroids[j] = members[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster on the point farthest from its centroid.
                far = int(np.argmax(d2[np.arange(n), labels]))
                new_centroids[j] = members[far]
        if len(wcss_history) > 1:
            prev = wcss_history[-2]
            if prev > 0 and (prev - wcss) / prev < tol:
                centroids = new_centroids
                break
        centroids = new_centroids
    return centroids, labels, wcss_history


def kmeans_augment(members: np.ndarray, k: int, seed: int,
                   max_iters: int = 100, tol: float = 1e-6) -> np.ndarray:
    """K centroid vectors over one category's support embeddings."""
    rng = np.random.default_rng(seed)
    centroids, _, _ = kmeans(members, k, rng, max_iters, tol)
    return centroids


# ---------------------------------------------------------------------------
# pattern-area map (prostate grading)

TUMOR_PATTERNS = ("G3", "G4", "G5")
SECONDARY_MIN_FRACTION = 0.05


@dataclass
class AreaMap:
    counts: dict[str, int]
    areas: dict[str, float]
    primary: str
    secondary: str

    @property
    def score(self) -> str:
        return f"{self.primary[1]}+{self.secondary[1]}"


def gleason_area_map(sim: SimilarityMatrix, toolkit: Toolkit,
                     area_per_patch: float = 1.0) -> AreaMap:
    """Assign every patch by argmax over all (sub-)prototypes, aggregate
    per-category areas, and derive the primary/secondary tumor patterns.

    The secondary pattern must cover at least max(5% of tumor area, one
    patch); otherwise it repeats the primary.
    """
    missing = [p for p in TUMOR_PATTERNS if p not in toolkit.categories]
    if missing:
        raise ConfigError(f"toolkit {toolkit.name!r} lacks pattern prototypes {missing}")
    assignments = np.argmax(sim.values, axis=1)
    counts: dict[str, int] = {c: 0 for c in toolkit.categories}
    for col, count in zip(*np.unique(assignments, return_counts=True)):
        counts[toolkit.prototypes[int(col)].category] += int(count)
    areas = {c: counts[c] * area_per_patch for c in counts}

    tumor = [(areas[p], p) for p in TUMOR_PATTERNS if counts.get(p, 0) > 0]
    if not tumor:
        raise NoTumorError("no patches assigned to any tumor pattern")
    tumor.sort(key=lambda item: (-item[0], item[1]))
    primary = tumor[0][1]
    total_tumor = sum(area for area, _ in tumor)
    threshold = max(SECONDARY_MIN_FRACTION * total_tumor, area_per_patch)
    secondary = primary
    if len(tumor) > 1 and tumor[1][0] >= threshold:
        secondary = tumor[1][1]
    return AreaMap(counts, areas, primary, secondary)


# ---------------------------------------------------------------------------
# selection plans


@dataclass(frozen=True)
class PlanPart:
    level: str
    k_top: int = 0
    k_random: int = 0
    k_augmented: int = 0


@dataclass(frozen=True)
class SelectionPlan:
    name: str
    parts: tuple[PlanPart, ...]

    def scaled(self, k_top: int | None = None, k_random: int | None = None) -> "SelectionPlan":
        parts = tuple(
            PlanPart(p.level,
                     k_top if (k_top is not None and p.k_top) else p.k_top,
                     k_random if (k_random is not None and p.k_random) else p.k_random,
                     p.k_augmented)
            for p in self.parts
        )
        return replace(self, parts=parts)


# Default screening plan: top-3 at 10x and 20x plus two random 10x picks.
PANCANCER_PLAN = SelectionPlan("pancancer", (
    PlanPart("10x", k_top=3, k_random=2),
    PlanPart("20x", k_top=3),
))

# Re-observation plan: the random picks are replaced by sub-prototype matches.
SUBTYPE_PLAN = SelectionPlan("subtype", (
    PlanPart("10x", k_top=3, k_augmented=2),
    PlanPart("20x", k_top=3),
))

DEFAULT_PLANS: dict[str, SelectionPlan] = {
    PANCANCER_PLAN.name: PANCANCER_PLAN,
    SUBTYPE_PLAN.name: SUBTYPE_PLAN,
}


def run_selection_plan(corpus: Corpus, slide_id: str, toolkit: Toolkit,
                       plan: SelectionPlan, rng: np.random.Generator) -> RoiSelection:
    """Execute a multi-level RoI plan over one slide with one grounding
    toolkit. Raises EmptyHighlightError when no part finds any highlighted
    patch."""
    combined = RoiSelection(plan.name)
    found_any = False
    for part in plan.parts:
        coords, emb = corpus.fetch_arrays(slide_id, part.level)
        level_toolkit = toolkit.at_level(part.level)
        sim = similarity_matrix(emb, level_toolkit)
        try:
            grounding = ground_regions(sim, level_toolkit)
        except ConfigError:
            raise
        if grounding.highlighted.size == 0:
            continue
        found_any = True
        taken: set[tuple[int, int]] = set()
        if part.k_top or part.k_random:
            selection = select_rois_region(
                grounding.highlighted, sim, level_toolkit, coords, part.level,
                part.k_top, part.k_random, rng, plan.name)
            combined.entries.extend(selection.entries)
            combined.shortfall = combined.shortfall or selection.shortfall
            taken = {(e.x, e.y) for e in selection.entries}
        if part.k_augmented:
            aug = select_rois_augmented(sim, level_toolkit, coords, part.level,
                                        part.k_augmented, exclude=taken, plan_name=plan.name)
            combined.entries.extend(aug.entries)
            combined.shortfall = combined.shortfall or aug.shortfall
    if not found_any:
        raise EmptyHighlightError(f"no highlighted region on slide {slide_id!r}")
    return combined


# ---------------------------------------------------------------------------
# toolkit persistence

TOOLKIT_VERSION = 1


def save_toolkit(toolkit: Toolkit, directory: str | Path) -> Path:
    """Write ``<name>.json`` plus a ``<name>.emb`` vector block (vectors are
    cached as float32 rows keyed by prototype order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": TOOLKIT_VERSION,
        "name": toolkit.name,
        "mode": toolkit.mode,
        "highlight": sorted(toolkit.highlight),
        "prototypes": [
            {
                "description": p.description,
                "category": p.category,
                "level": p.level,
                "support_ids": list(p.support_ids),
                "augmented": p.augmented,
            }
            for p in toolkit.prototypes
        ],
    }
    path = directory / f"{toolkit.name}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    coords = np.array([[i, 0] for i in range(len(toolkit.prototypes))])
    vectors = np.stack([p.vector for p in toolkit.prototypes]).astype(np.float32)
    write_block(directory / f"{toolkit.name}.emb", coords, vectors)
    return path


def load_toolkit(directory: str | Path, name: str) -> Toolkit:
    directory = Path(directory)
    path = directory / f"{name}.json"
    if not path.is_file():
        raise NotFoundError(f"toolkit {name!r} not found under {directory}")
    doc = json.loads(path.read_text())
    coords, vectors = read_block(directory / f"{name}.emb")
    order = np.argsort(coords[:, 0], kind="stable")
    vectors = vectors[order]
    protos = [
        Prototype(
            entry["description"], entry["level"],
            vectors[i].astype(np.float64),
            tuple(entry["support_ids"]), entry["category"],
            bool(entry.get("augmented", False)),
        )
        for i, entry in enumerate(doc["prototypes"])
    ]
    return Toolkit(doc["name"], doc["mode"], protos, frozenset(doc.get("highlight", [])))


class ToolkitStore:
    """Lazy loader over a toolkit directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._cache: dict[str, Toolkit] = {}

    def names(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))

    def get(self, name: str) -> Toolkit:
        if name not in self._cache:
            self._cache[name] = load_toolkit(self.directory, name)
        return self._cache[name]


def build_toolkit_from_spec(spec: Mapping, corpus: Corpus) -> Toolkit:
    """Materialize a toolkit from a declarative JSON spec.

    Each prototype entry names its support patches as corpus references
    ``{"slide": ..., "level": ..., "xy": [[x, y], ...]}``; an optional
    ``kmeans`` count adds that many sub-prototypes for the same category.
    """
    protos: list[Prototype] = []
    highlight: set[str] = set(spec.get("highlight", []))
    for entry in spec["prototypes"]:
        support = entry["support"]
        slide, level = support["slide"], support.get("level", entry["level"])
        coords, emb = corpus.fetch_arrays(slide, level)
        index = {(int(x), int(y)): i for i, (x, y) in enumerate(coords)}
        rows = []
        ids = []
        for x, y in support["xy"]:
            key = (int(x), int(y))
            if key not in index:
                raise NotFoundError(f"support patch {slide}:{level}:{x}:{y} not in corpus")
            rows.append(emb[index[key]])
            ids.append(f"{slide}:{level}:{x}:{y}")
        refs = np.stack(rows)
        proto = build_prototype(refs, entry["description"], entry["level"],
                                entry["category"], support_ids=ids)
        protos.append(proto)
        k = int(entry.get("kmeans", 0))
        if k:
            centroids = kmeans_augment(refs, k, seed=int(spec.get("seed", 0)))
            for j, centroid in enumerate(centroids):
                sub = Prototype(
                    f"{entry['description']} [sub {j + 1}]", entry["level"],
                    centroid, tuple(ids), entry["category"], augmented=True)
                protos.append(sub)
                if entry["description"] in highlight:
                    highlight.add(sub.description)
    return Toolkit(spec["name"], spec["mode"], protos, frozenset(highlight))
