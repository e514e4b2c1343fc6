import numpy as np
import pytest

from taxozsl.taxonomy import build_taxonomy


def balanced_taxonomy(families=3, genera=2, species=2):
    records, s = [], 0
    for f in range(families):
        for gi in range(genera):
            for _ in range(species):
                records.append((s, f * genera + gi, f))
                s += 1
    return build_taxonomy(records)


def random_taxonomy(rng, max_species=12, min_genera=1):
    """Random depth-3 tree with dense ids; genus/family ids also dense."""
    n_species = int(rng.integers(max(2, min_genera), max_species + 1))
    n_genera = int(rng.integers(min_genera, n_species + 1))
    genus_of = np.concatenate([np.arange(n_genera), rng.integers(0, n_genera, n_species - n_genera)])
    rng.shuffle(genus_of)
    n_families = int(rng.integers(1, n_genera + 1))
    family_of = np.concatenate([np.arange(n_families),
                                rng.integers(0, n_families, n_genera - n_families)])
    rng.shuffle(family_of)
    return build_taxonomy([(s, int(genus_of[s]), int(family_of[genus_of[s]]))
                           for s in range(n_species)])


@pytest.fixture
def tax12():
    return balanced_taxonomy()


# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
