"""Datasets, TF-IDF semantics, cross-knowledge expansion and taxonomy centers."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDocument,
    EmptyInput,
    EmptyNode,
    NonFinite,
    ParseError,
    UnknownLabel,
    UnknownSpecies,
)
from .numerics import make_rng
from .taxonomy import Level, Taxonomy, similar_classes


@dataclass(frozen=True)
class Dataset:
    """Visual features with class labels plus one semantic vector per class.

    ``semantics`` may cover more classes than appear in ``labels`` (e.g.
    unseen classes whose semantics are needed at test time).
    """

    features: np.ndarray
    labels: np.ndarray
    semantics: Mapping[int, np.ndarray]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
            raise DimensionMismatch(f"{feats.shape[0]} feature rows vs {labels.shape[0]} labels")
        sem = {int(k): np.asarray(v, dtype=np.float64).reshape(-1) for k, v in self.semantics.items()}
        dims = {v.shape[0] for v in sem.values()}
        if len(dims) > 1:
            raise DimensionMismatch(f"semantic vectors have differing dimensions {sorted(dims)}")
        missing = sorted(set(labels.tolist()) - set(sem))
        if missing:
            raise UnknownLabel(f"no semantic vector for labels {missing}")
        if not np.all(np.isfinite(feats)) or any(not np.all(np.isfinite(v)) for v in sem.values()):
            raise NonFinite("dataset contains non-finite values")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "semantics", dict(sorted(sem.items())))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.features.shape[1]

    @property
    def semantic_dim(self) -> int:
        return next(iter(self.semantics.values())).shape[0]

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.labels.tolist()))

    def sample_semantics(self) -> np.ndarray:
        """Per-sample semantic rows ``t_i`` (class-level)."""
        return self.semantic_matrix(self.labels)

    def semantic_matrix(self, classes) -> np.ndarray:
        return np.stack([self.semantics[int(c)] for c in classes]) if len(classes) else \
            np.zeros((0, self.semantic_dim))

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.features[mask], self.labels[mask], self.semantics)

    def restrict_classes(self, classes) -> "Dataset":
        return self.subset(np.isin(self.labels, sorted(classes)))


# ---------------------------------------------------------------- TF-IDF

def tfidf_featurize(corpus: Mapping[int, list[str]], vocab_limit: int | None = None):
    """TF-IDF vectors, one per species.

    tf = count / document length, idf = ln((1 + D) / (1 + df)) + 1, then each
    vector is L2-normalised. Vocabulary is ordered by descending document
    frequency, ties lexicographic, and truncated to ``vocab_limit`` terms.
    Returns ``(vectors: dict species -> array, vocabulary: list[str])``.
    """
    if not corpus:
        raise EmptyInput("corpus is empty")
    for species, tokens in corpus.items():
        if not tokens:
            raise EmptyDocument(f"document for species {species} has no tokens")
    n_docs = len(corpus)
    df = Counter()
    for tokens in corpus.values():
        df.update(set(tokens))
    vocab = sorted(df, key=lambda term: (-df[term], term))
    if vocab_limit is not None:
        vocab = vocab[: max(1, int(vocab_limit))]
    index = {term: i for i, term in enumerate(vocab)}
    idf = np.array([math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in vocab])
    vectors = {}
    for species in sorted(corpus):
        tokens = corpus[species]
        vec = np.zeros(len(vocab))
        for term, count in Counter(tokens).items():
            if term in index:
                vec[index[term]] = count / len(tokens)
        vec *= idf
        norm = np.linalg.norm(vec)
        vectors[int(species)] = vec / norm if norm > 0 else vec
    return vectors, vocab


def tokenize(text: str) -> list[str]:
    out, word = [], []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


def read_corpus(directory) -> dict[int, list[str]]:
    """One text file per species; the file stem is the species id."""
    corpus = {}
    for path in sorted(Path(directory).iterdir()):
        if not path.is_file():
            continue
        try:
            species = int(path.stem)
        except ValueError:
            raise ParseError(path, 0, "corpus file name must be an integer species id") from None
        corpus[species] = tokenize(path.read_text(encoding="utf-8"))
        if not corpus[species]:
            raise EmptyDocument(f"{path}: document has no tokens")
    if not corpus:
        raise EmptyInput(f"{directory}: no corpus files")
    return corpus


# ---------------------------------------------------------------- file I/O

def fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path):
    """Yield ``(lineno, [floats])``; a non-numeric first line is a header."""
    path = Path(path)
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(path, lineno, f"non-numeric value in {row}") from None
            yield lineno, vals


def read_labeled_rows(path):
    ids, rows, width = [], [], None
    for lineno, vals in _read_rows(path):
        if len(vals) < 2:
            raise ParseError(path, lineno, "expected an id column followed by values")
        if width is not None and len(vals) != width:
            raise DimensionMismatch(f"{path}:{lineno}: {len(vals) - 1} values, expected {width - 1}")
        width = len(vals)
        if vals[0] != int(vals[0]):
            raise ParseError(path, lineno, f"id {vals[0]} is not an integer")
        ids.append(int(vals[0]))
        rows.append(vals[1:])
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return np.array(ids, dtype=np.int64), np.array(rows, dtype=np.float64)


def load_dataset(visual_path, semantic_path, taxonomy: Taxonomy | None = None,
                 labels_path=None) -> Dataset:
    """Load features and semantics from delimited text.

    Without ``labels_path`` the visual file rows are ``label,v_0,...``. With it,
    visual rows hold only values and labels come one per row from that file.
    Labels are checked against ``taxonomy`` when one is given.
    """
    if labels_path is None:
        labels, feats = read_labeled_rows(visual_path)
    else:
        feat_rows = [vals for _, vals in _read_rows(visual_path)]
        widths = {len(r) for r in feat_rows}
        if len(widths) > 1:
            raise DimensionMismatch(f"{visual_path}: rows have differing widths {sorted(widths)}")
        feats = np.array(feat_rows, dtype=np.float64)
        label_rows = []
        for lineno, vals in _read_rows(labels_path):
            if len(vals) != 1 or vals[0] != int(vals[0]):
                raise ParseError(labels_path, lineno, "expected one integer label per row")
            label_rows.append(int(vals[0]))
        labels = np.array(label_rows, dtype=np.int64)
        if feats.shape[0] != labels.shape[0]:
            raise DimensionMismatch(
                f"{feats.shape[0]} visual rows vs {labels.shape[0]} label rows")
    sem_ids, sem_rows = read_labeled_rows(semantic_path)
    if len(set(sem_ids.tolist())) != len(sem_ids):
        raise ParseError(semantic_path, 0, "duplicate species id in semantic file")
    if taxonomy is not None:
        known = set(taxonomy.species_ids)
        for lab in list(labels.tolist()) + list(sem_ids.tolist()):
            if lab not in known:
                raise UnknownLabel(f"label {lab} is not in the taxonomy")
    return Dataset(feats, labels, dict(zip(sem_ids.tolist(), sem_rows)))


def write_visual(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"v_{i}" for i in range(ds.visual_dim)])
        for y, row in zip(ds.labels.tolist(), ds.features):
            w.writerow([y] + [fmt(v) for v in row])


def write_semantics(semantics: Mapping[int, np.ndarray], path) -> None:
    semantics = dict(sorted(semantics.items()))
    dim = len(next(iter(semantics.values())))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["species_id"] + [f"s_{i}" for i in range(dim)])
        for s, vec in semantics.items():
            w.writerow([s] + [fmt(v) for v in vec])


# ---------------------------------------------------------------- synthetic data

FAMILY_SCALE = 3.0
GENUS_SCALE = 1.5
SPECIES_SCALE = 0.75


def synth_dataset(tax: Taxonomy, per_class: int, visual_dim: int, semantic_dim: int,
                  noise_scale: float, seed: int) -> Dataset:
    """Hierarchical Gaussian clusters.

    Each class mean is family_mean + genus_offset + species_offset with
    per-level standard deviations 3, 1.5 and 0.75; samples add isotropic noise
    of ``noise_scale``. Semantic vectors are built the same way from an
    independent draw, so both spaces share the tree's correlation structure.
    """
    if per_class < 1 or visual_dim < 1 or semantic_dim < 1:
        raise ValueError("per_class, visual_dim and semantic_dim must be >= 1")
    rng = make_rng(seed)

    def class_means(dim):
        fam = {f: rng.normal(0.0, FAMILY_SCALE, dim) for f in tax.families}
        gen = {g: rng.normal(0.0, GENUS_SCALE, dim) for g in tax.genera}
        return {s: fam[tax.family_of(s)] + gen[tax.genus_of(s)] + rng.normal(0.0, SPECIES_SCALE, dim)
                for s in tax.species_ids}

    visual_means = class_means(visual_dim)
    semantics = class_means(semantic_dim)
    feats, labels = [], []
    for s in tax.species_ids:
        noise = rng.normal(0.0, 1.0, (per_class, visual_dim))
        feats.append(visual_means[s] + noise_scale * noise)
        labels += [s] * per_class
    return Dataset(np.vstack(feats), np.array(labels), semantics)


def holdout_split(ds: Dataset, fraction: float, rng: np.random.Generator):
    """Per-class random split into ``(train, heldout)``; each class keeps >= 1 training row."""
    held = np.zeros(ds.n, dtype=bool)
    for c in ds.classes:
        idx = np.flatnonzero(ds.labels == c)
        k = min(int(math.floor(fraction * idx.size)), idx.size - 1)
        if k > 0:
            held[rng.permutation(idx)[:k]] = True
    return ds.subset(~held), ds.subset(held)


# ---------------------------------------------------------------- CKL expansion

@dataclass(frozen=True)
class CklDataset:
    """Expanded training pairs for one taxonomy level.

    Row ``j`` pairs visual sample ``sample_index[j]`` (label ``labels[j]``) with
    the semantic vector of species ``t_source[j]``.
    """

    level: Level
    features: np.ndarray
    labels: np.ndarray
    semantics: np.ndarray
    t_source: np.ndarray
    sample_index: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def pairs(self):
        return [(self.features[j], int(self.labels[j]), self.semantics[j], int(self.t_source[j]))
                for j in range(len(self))]


def ckl_expand(ds: Dataset, tax: Taxonomy, level) -> CklDataset:
    """One pair per (sample, similar class) at ``level``.

    Similar classes are restricted to classes present in ``ds``: expansion only
    borrows semantics from seen classes.
    """
    level = Level.parse(level)
    present = set(ds.classes)
    for c in present:
        if c not in tax.parent_genus:
            raise UnknownSpecies(f"species {c} is not in the taxonomy")
    partners = {c: sorted(similar_classes(tax, c, level) & present) for c in present}
    idx, src = [], []
    for i, y in enumerate(ds.labels.tolist()):
        for k in partners[y]:
            idx.append(i)
            src.append(k)
    idx = np.array(idx, dtype=np.int64)
    src = np.array(src, dtype=np.int64)
    return CklDataset(level, ds.features[idx], ds.labels[idx], ds.semantic_matrix(src), src, idx)


# ---------------------------------------------------------------- centers

@dataclass(frozen=True)
class CenterTable:
    species_center: dict
    genus_center: dict
    family_center: dict
    species_count: dict
    genus_count: dict
    family_count: dict

    def table(self, level) -> tuple[dict, dict]:
        level = Level.parse(level)
        if level is Level.SPECIES:
            return self.species_center, self.species_count
        if level is Level.GENUS:
            return self.genus_center, self.genus_count
        return self.family_center, self.family_count

    def for_labels(self, labels, tax: Taxonomy, level) -> np.ndarray:
        """Row-aligned centers of each label's node at ``level``."""
        centers, _ = self.table(level)
        rows = []
        for y in np.asarray(labels).tolist():
            node = tax.node_of(y, level)
            if node not in centers:
                raise EmptyNode(f"{Level.parse(level).value} node {node} has no seen samples")
            rows.append(centers[node])
        return np.stack(rows)


def compute_centers(ds: Dataset, tax: Taxonomy) -> CenterTable:
    """Mean visual feature per species, genus and family over all member samples."""
    if ds.n == 0:
        raise EmptyInput("cannot compute centers of an empty dataset")
    out = {}
    for level in Level:
        nodes = np.array([tax.node_of(y, level) for y in ds.labels.tolist()])
        centers, counts = {}, {}
        for node in sorted(set(nodes.tolist())):
            mask = nodes == node
            centers[node] = ds.features[mask].mean(axis=0)
            counts[node] = int(mask.sum())
        out[level] = (centers, counts)
    return CenterTable(out[Level.SPECIES][0], out[Level.GENUS][0], out[Level.FAMILY][0],
                       out[Level.SPECIES][1], out[Level.GENUS][1], out[Level.FAMILY][1])
