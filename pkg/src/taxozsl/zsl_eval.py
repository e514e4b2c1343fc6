"""Synthesized feature banks, nearest-neighbour inference and ZSL metrics."""

from __future__ import annotations

import math
import os
from fractions import Fraction
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateCovariance,
    DegenerateInput,
    EmptyBank,
    EmptyQuerySet,
    MissingClass,
    ShapeMismatch,
    UnknownClass,
)
from .gan import Generator
from .numerics import make_rng

DEFAULT_GRID_SIZE = 201


def worker_count() -> int:
    """Thread cap from ``TAXOZSL_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TAXOZSL_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SynthesizedBank:
    """Visual features grouped by class; rows are sorted by class id."""

    features: np.ndarray
    classes: tuple[int, ...]
    class_index: np.ndarray

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        idx = np.asarray(self.class_index, dtype=np.int64)
        if feats.shape[0] != idx.shape[0]:
            raise ShapeMismatch("bank rows and class indices differ in length")
        if idx.size and np.any(np.diff(idx) < 0):
            raise ValueError("bank rows must be grouped in class order")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "class_index", idx)
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @classmethod
    def from_groups(cls, groups: Mapping[int, np.ndarray]) -> "SynthesizedBank":
        classes = sorted(int(c) for c in groups)
        feats = [np.atleast_2d(groups[c]) for c in classes]
        index = np.concatenate([np.full(len(f), i) for i, f in enumerate(feats)]) if feats else \
            np.zeros(0, dtype=np.int64)
        return cls(np.vstack(feats) if feats else np.zeros((0, 0)), tuple(classes), index)

    @property
    def n_per_class(self) -> int:
        counts = np.bincount(self.class_index, minlength=len(self.classes))
        return int(counts[0]) if counts.size else 0

    def of(self, c: int) -> np.ndarray:
        try:
            i = self.classes.index(int(c))
        except ValueError:
            raise UnknownClass(f"class {c} is not in the bank") from None
        return self.features[self.class_index == i]

    def center(self, c: int) -> np.ndarray:
        return self.of(c).mean(axis=0)

    def restrict(self, classes) -> "SynthesizedBank":
        return SynthesizedBank.from_groups({c: self.of(c) for c in classes})


def synthesize_bank(g: Generator, semantics: Mapping[int, np.ndarray], n: int,
                    seed: int | np.random.Generator = 0) -> SynthesizedBank:
    """``n`` generated features per class, noise drawn class by class in id order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    groups = {}
    for c in sorted(semantics):
        t = np.tile(np.asarray(semantics[c], dtype=np.float64), (n, 1))
        out, _ = g.forward(t, rng.standard_normal((n, g.noise_dim)))
        groups[int(c)] = out
    return SynthesizedBank.from_groups(groups)


def _vote(nn_idx, nn_dist, bank: SynthesizedBank) -> int:
    """Majority over neighbours; ties -> smaller mean distance -> smaller class id."""
    cls = bank.class_index[nn_idx]
    best = None
    for c in np.unique(cls):
        sel = cls == c
        key = (-int(sel.sum()), float(nn_dist[sel].mean()), bank.classes[c])
        if best is None or key < best:
            best = key
    return best[2]


def classify_batch(bank: SynthesizedBank, queries, k: int = 1):
    """Labels and per-class scores (negative nearest distance) for many queries."""
    if bank.features.shape[0] == 0:
        raise EmptyBank("synthesized bank is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != bank.features.shape[1]:
        raise ShapeMismatch(f"query width {queries.shape[1]} vs bank width {bank.features.shape[1]}")
    workers = worker_count()

    def run(chunk):
        return kernels.knn_query(chunk, bank.features, bank.class_index, len(bank.classes), k)

    if workers > 1 and queries.shape[0] > workers:
        chunks = np.array_split(queries, workers)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
        class_min = np.vstack([p[0] for p in parts])
        nn_idx = np.vstack([p[1] for p in parts])
        nn_dist = np.vstack([p[2] for p in parts])
    else:
        class_min, nn_idx, nn_dist = run(queries)
    labels = np.array([_vote(i, d, bank) for i, d in zip(nn_idx, nn_dist)], dtype=np.int64)
    return labels, -class_min


def classify(bank: SynthesizedBank, x, k: int = 1):
    """Label of one query plus ``{class: score}``."""
    labels, scores = classify_batch(bank, np.asarray(x, dtype=np.float64).reshape(1, -1), k)
    return int(labels[0]), dict(zip(bank.classes, scores[0].tolist()))


def per_class_accuracy(y_true, y_pred, classes) -> dict[int, float]:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes = [int(c) for c in classes]
    stray = sorted(set(y_true.tolist()) - set(classes))
    if stray:
        raise MissingClass(f"labels {stray} are outside the evaluated classes")
    out = {}
    for c in classes:
        mask = y_true == c
        if not mask.any():
            raise MissingClass(f"class {c} has no predictions")
        out[c] = float(np.mean(y_pred[mask] == c))
    return out


def top1_per_class(y_true, y_pred, classes) -> float:
    """Accuracy computed per class, then averaged over classes."""
    acc = per_class_accuracy(y_true, y_pred, classes)
    return float(np.mean(list(acc.values())))


def harmonic_mean(unseen: float, seen: float) -> float:
    if unseen + seen <= 0:
        raise DegenerateInput("harmonic mean undefined for U = S = 0")
    return 2.0 * unseen * seen / (unseen + seen)


# ---------------------------------------------------------------- AUSUC

@dataclass(frozen=True)
class SucCurve:
    offsets: np.ndarray
    seen_acc: np.ndarray
    unseen_acc: np.ndarray
    area: float

    def points(self):
        return list(zip(self.offsets.tolist(), self.seen_acc.tolist(), self.unseen_acc.tolist()))


def default_grid(scores: np.ndarray, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    spread = float(scores.max() - scores.min()) if scores.size else 0.0
    spread = spread if spread > 0 else 1.0
    return np.linspace(-spread, spread, size)


def suc_from_scores(seen_scores, seen_labels, unseen_scores, unseen_labels, classes,
                    seen_classes, grid=None) -> SucCurve:
    """Seen-unseen accuracy curve from per-class score matrices.

    ``offset`` is added to every seen-class score before the argmax. The
    curve is closed with the offsets -inf (only unseen classes predicted)
    and +inf (only seen classes predicted) and integrated with trapezoids.
    """
    classes = np.asarray(classes)
    seen_cols = np.isin(classes, sorted(seen_classes))
    seen_scores = np.atleast_2d(seen_scores)
    unseen_scores = np.atleast_2d(unseen_scores)
    if len(seen_labels) == 0 or len(unseen_labels) == 0:
        raise EmptyQuerySet("AUSUC needs both seen and unseen queries")
    if grid is None:
        grid = default_grid(np.vstack([seen_scores, unseen_scores]))
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise ValueError("calibration grid must be non-empty and sorted")
    seen_cls = sorted(set(np.asarray(seen_labels).tolist()))
    unseen_cls = sorted(set(np.asarray(unseen_labels).tolist()))

    def accuracies(shift_seen, shift_unseen):
        bias = np.where(seen_cols, shift_seen, shift_unseen)
        ps = classes[np.argmax(seen_scores + bias, axis=1)]
        pu = classes[np.argmax(unseen_scores + bias, axis=1)]
        return (top1_per_class(seen_labels, ps, seen_cls),
                top1_per_class(unseen_labels, pu, unseen_cls))

    pts = [accuracies(-np.inf, 0.0)]
    pts += [accuracies(lam, 0.0) for lam in grid]
    pts.append(accuracies(0.0, -np.inf))
    pts = np.array(pts)
    x, y = pts[:, 0], pts[:, 1]
    area = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
    offsets = np.concatenate([[-np.inf], grid, [np.inf]])
    return SucCurve(offsets, x, y, area)


def ausuc(seen_queries, unseen_queries, gzsl_bank: SynthesizedBank, grid=None,
          seen_classes=None, k: int = 1) -> SucCurve:
    """AUSUC of nearest-neighbour scores against a bank covering seen and unseen classes.

    ``seen_queries`` / ``unseen_queries`` are ``(features, labels)`` pairs.
    Seen classes default to the labels of the seen queries.
    """
    (xs, ys), (xu, yu) = seen_queries, unseen_queries
    if len(ys) == 0 or len(yu) == 0:
        raise EmptyQuerySet("AUSUC needs both seen and unseen queries")
    _, s_scores = classify_batch(gzsl_bank, xs, k)
    _, u_scores = classify_batch(gzsl_bank, xu, k)
    if seen_classes is None:
        seen_classes = sorted(set(np.asarray(ys).tolist()))
    return suc_from_scores(s_scores, ys, u_scores, yu, gzsl_bank.classes, seen_classes, grid)


# ---------------------------------------------------------------- retrieval

def average_precision(relevance) -> float:
    """Mean of precision@i over the relevant positions of a ranked list.

    Summed in exact rationals, so the result is the correctly rounded value
    regardless of list length or summation order.
    """
    rel = np.asarray(relevance, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    total = sum(Fraction(i + 1, int(pos) + 1) for i, pos in enumerate(hits))
    return float(total / hits.size)


def retrieve(bank: SynthesizedBank, c: int, gallery_features, gallery_labels,
             fraction: float = 1.0):
    """Rank the gallery by distance to the class's synthesized center.

    Retrieval stops once ``ceil(fraction * |class c in gallery|)`` relevant
    items are found. Returns ``(ranked gallery indices, average precision)``.
    """
    labels = np.asarray(gallery_labels)
    count = int(np.sum(labels == c))
    if count == 0:
        raise UnknownClass(f"class {c} has no gallery samples")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    center = bank.center(c)
    dist = kernels.sq_dists(center[None, :], gallery_features)[0]
    order = np.argsort(dist, kind="stable")
    needed = math.ceil(fraction * count - 1e-9)
    rel = labels[order] == c
    cut = int(np.flatnonzero(rel)[needed - 1]) + 1
    return order[:cut], average_precision(rel[:cut])


def mean_average_precision(bank: SynthesizedBank, gallery_features, gallery_labels,
                           fraction: float = 1.0, classes=None):
    """``(mAP, {class: AP})`` over ``classes`` (default: every bank class in the gallery)."""
    labels = np.asarray(gallery_labels)
    if classes is None:
        classes = [c for c in bank.classes if np.any(labels == c)]
    aps = {int(c): retrieve(bank, c, gallery_features, labels, fraction)[1] for c in classes}
    return float(np.mean(list(aps.values()))), aps


# ---------------------------------------------------------------- embedding export

def export_embedding(features, labels, kinds: Sequence[str] | None = None, dims: int = 2):
    """Project onto the top principal components.

    Rows are ``(label, kind, pc1, ..., pc_dims)``. Each component's sign is
    fixed so its largest-magnitude loading is positive.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = x.shape[0]
    if n < dims + 1:
        raise DegenerateCovariance(f"need at least {dims + 1} samples, got {n}")
    if kinds is None:
        kinds = ["real"] * n
    centered = x - x.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if sv.size == 0 or sv[0] <= 1e-12 * max(1.0, np.abs(x).max()):
        raise DegenerateCovariance("features have zero variance")
    comps = np.zeros((dims, x.shape[1]))
    m = min(dims, vt.shape[0])
    comps[:m] = vt[:m]
    for i in range(m):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    return [(int(l), str(k), *map(float, row)) for l, k, row in zip(labels, kinds, proj)]
