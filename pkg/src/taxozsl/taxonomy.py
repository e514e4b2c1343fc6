"""Family -> Genus -> Species hierarchy and seen/unseen splitting."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DuplicateSpecies,
    EmptyInput,
    InconsistentParent,
    InfeasibleSplit,
    ParseError,
    TaxoZslError,
    UnknownSpecies,
)


class Level(enum.Enum):
    SPECIES = "species"
    GENUS = "genus"
    FAMILY = "family"

    @classmethod
    def parse(cls, value) -> "Level":
        if isinstance(value, Level):
            return value
        return cls(str(value).lower())


class SplitMode(enum.Enum):
    EASY = "easy"
    HARD = "hard"


@dataclass(frozen=True)
class Taxonomy:
    """Immutable three-level tree. Species ids are dense class labels 0..C-1."""

    species_ids: tuple[int, ...]
    parent_genus: Mapping[int, int]
    parent_family: Mapping[int, int]
    display_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "parent_genus", MappingProxyType(dict(self.parent_genus)))
        object.__setattr__(self, "parent_family", MappingProxyType(dict(self.parent_family)))
        object.__setattr__(self, "display_names", MappingProxyType(dict(self.display_names)))
        genus_members: dict[int, list[int]] = {}
        for s in self.species_ids:
            genus_members.setdefault(self.parent_genus[s], []).append(s)
        family_members: dict[int, list[int]] = {}
        for s in self.species_ids:
            family_members.setdefault(self.family_of(s), []).append(s)
        object.__setattr__(
            self, "_genus_members", {g: frozenset(m) for g, m in genus_members.items()}
        )
        object.__setattr__(
            self, "_family_members", {f: frozenset(m) for f, m in family_members.items()}
        )

    @property
    def n_species(self) -> int:
        return len(self.species_ids)

    @property
    def genera(self) -> list[int]:
        return sorted(self._genus_members)

    @property
    def families(self) -> list[int]:
        return sorted(self._family_members)

    def _check(self, y: int) -> int:
        y = int(y)
        if y not in self.parent_genus:
            raise UnknownSpecies(f"species {y} is not in the taxonomy")
        return y

    def genus_of(self, y: int) -> int:
        return self.parent_genus[self._check(y)]

    def family_of(self, y: int) -> int:
        return self.parent_family[self.parent_genus[self._check(y)]]

    def node_of(self, y: int, level) -> int:
        level = Level.parse(level)
        if level is Level.SPECIES:
            return self._check(y)
        if level is Level.GENUS:
            return self.genus_of(y)
        return self.family_of(y)

    def genus_members(self, genus: int) -> frozenset[int]:
        return self._genus_members[genus]

    def family_members(self, family: int) -> frozenset[int]:
        return self._family_members[family]

    def to_records(self) -> list[tuple[int, int, int]]:
        return [(s, self.genus_of(s), self.family_of(s)) for s in self.species_ids]


def build_taxonomy(records: Iterable, names: Mapping[int, str] | None = None) -> Taxonomy:
    """Validate ``(species, genus, family)`` triples and build a :class:`Taxonomy`.

    Raises EmptyInput, DuplicateSpecies, or InconsistentParent. Species ids
    must form the dense range 0..C-1 because they double as class labels.
    """
    records = [tuple(int(v) for v in r[:3]) for r in records]
    if not records:
        raise EmptyInput("taxonomy needs at least one record")
    parent_genus: dict[int, int] = {}
    parent_family: dict[int, int] = {}
    for species, genus, family in records:
        if species in parent_genus:
            if parent_genus[species] != genus:
                raise InconsistentParent(
                    f"species {species} listed under genera {parent_genus[species]} and {genus}"
                )
            raise DuplicateSpecies(f"species {species} listed twice")
        if genus in parent_family and parent_family[genus] != family:
            raise InconsistentParent(
                f"genus {genus} listed under families {parent_family[genus]} and {family}"
            )
        parent_genus[species] = genus
        parent_family[genus] = family
    ids = sorted(parent_genus)
    if ids != list(range(len(ids))):
        raise TaxoZslError(f"species ids must be dense 0..{len(ids) - 1}, got {ids}")
    return Taxonomy(tuple(ids), parent_genus, parent_family, dict(names or {}))


def similar_classes(tax: Taxonomy, y: int, level) -> frozenset[int]:
    """Species sharing ``y``'s node at ``level`` (``y`` itself included)."""
    level = Level.parse(level)
    y = tax._check(y)
    if level is Level.SPECIES:
        return frozenset((y,))
    if level is Level.GENUS:
        return tax.genus_members(tax.genus_of(y))
    return tax.family_members(tax.family_of(y))


@dataclass(frozen=True)
class SplitSpec:
    mode: SplitMode = SplitMode.EASY
    unseen_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if not 0.0 < self.unseen_fraction < 1.0:
            raise InfeasibleSplit(f"unseen_fraction must lie in (0, 1), got {self.unseen_fraction}")


def unseen_count(n_species: int, fraction: float) -> int:
    # 1e-9 keeps fractions like 1/3 * 12 from flooring to 3
    return max(1, math.floor(fraction * n_species + 1e-9))


def make_split(tax: Taxonomy, spec: SplitSpec, rng: np.random.Generator | None = None):
    """Partition species into ``(seen, unseen)`` frozensets.

    Easy mode picks unseen species round-robin over shuffled genera, never
    emptying a genus of its seen members while multi-species genera have room.
    Hard mode moves whole genera to the unseen side.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = tax.n_species
    target = unseen_count(n, spec.unseen_fraction)
    if target >= n:
        raise InfeasibleSplit(f"{target} unseen of {n} species leaves no seen class")
    if spec.mode is SplitMode.HARD:
        unseen = _hard_split(tax, target, rng)
    else:
        unseen = _easy_split(tax, target, rng)
    unseen = frozenset(unseen)
    return frozenset(tax.species_ids) - unseen, unseen


def _easy_split(tax: Taxonomy, target: int, rng) -> set[int]:
    genera = [g for g in tax.genera if len(tax.genus_members(g)) >= 2]
    order = [genera[i] for i in rng.permutation(len(genera))]
    pools = {g: [sorted(tax.genus_members(g))[i] for i in rng.permutation(len(tax.genus_members(g)))]
             for g in order}
    unseen: set[int] = set()
    progress = True
    while len(unseen) < target and progress:
        progress = False
        for g in order:
            if len(unseen) == target:
                break
            # leave at least one seen species in every multi-species genus
            if len(pools[g]) > 1:
                unseen.add(pools[g].pop())
                progress = True
    if len(unseen) < target:
        singles = [g for g in tax.genera if len(tax.genus_members(g)) == 1]
        picks = [singles[i] for i in rng.permutation(len(singles))][: target - len(unseen)]
        unseen.update(next(iter(tax.genus_members(g))) for g in picks)
    if len(unseen) < target:
        raise InfeasibleSplit(f"cannot place {target} unseen species in easy mode")
    return unseen


def _hard_split(tax: Taxonomy, target: int, rng) -> set[int]:
    genera = tax.genera
    if len(genera) < 2:
        raise InfeasibleSplit("hard split needs at least two genera")
    order = [genera[i] for i in rng.permutation(len(genera))]
    chosen: list[int] = []
    total = 0
    for g in order:
        size = len(tax.genus_members(g))
        if total + size <= target:
            chosen.append(g)
            total += size
    if not chosen:
        chosen = [min(order, key=lambda g: (len(tax.genus_members(g)), order.index(g)))]
    if len(chosen) == len(genera):
        raise InfeasibleSplit("hard split would leave no seen genus")
    return set().union(*(tax.genus_members(g) for g in chosen))


def read_taxonomy(path) -> Taxonomy:
    """Read ``species_id,genus_id,family_id[,name]`` with a header row."""
    path = Path(path)
    records, names = [], {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInput(f"{path}: empty taxonomy file")
        if [h.strip() for h in header[:3]] != ["species_id", "genus_id", "family_id"]:
            raise ParseError(path, 1, "expected header species_id,genus_id,family_id[,name]")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                rec = tuple(int(v) for v in row[:3])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if len(rec) != 3:
                raise ParseError(path, lineno, "expected three integer columns")
            records.append(rec)
            if len(row) > 3 and row[3].strip():
                names[rec[0]] = row[3].strip()
    return build_taxonomy(records, names)


def write_taxonomy(tax: Taxonomy, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_names = bool(tax.display_names)
        w.writerow(["species_id", "genus_id", "family_id"] + (["name"] if has_names else []))
        for s, g, f in tax.to_records():
            w.writerow([s, g, f] + ([tax.display_names.get(s, "")] if has_names else []))


def write_split(seen, unseen, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["species_id", "split"])
        for s in sorted(set(seen) | set(unseen)):
            w.writerow([s, "seen" if s in seen else "unseen"])


def read_split(path):
    seen, unseen = set(), set()
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if row[1] not in ("seen", "unseen"):
                raise ParseError(path, lineno, f"bad split value {row[1]!r}")
            (seen if row[1] == "seen" else unseen).add(int(row[0]))
    return frozenset(seen), frozenset(unseen)
