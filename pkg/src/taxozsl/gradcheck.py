"""Analytic-vs-central-difference checks for every training loss.

Each random draw builds a small generator/critic pair (at most 2000
parameters each), fixed batches, and compares the hand-derived gradients of
every loss term against :func:`finite_diff_grad`. Piecewise-linear nets use
kink detection: coordinates whose perturbation flips an activation sign are
excluded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gan import (
    GenBatch,
    TrWeights,
    discriminator_objective,
    generator_objective,
    init_discriminator,
    init_generator,
)
from .numerics import finite_diff_grad, make_rng, relative_error

GENERATOR_TERMS = ("wass_G", "cls_G", "tr_species", "tr_genus", "tr_family", "tr_total", "loss_G")
DISCRIMINATOR_TERMS = ("wass_D", "gp", "cls_D", "loss_D")
ALL_TERMS = GENERATOR_TERMS + DISCRIMINATOR_TERMS
MAX_PARAMS = 2000


@dataclass
class TermResult:
    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int
    skipped: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_err < self.tol


def _random_problem(rng: np.random.Generator, smooth: bool):
    sem, noise, vis = rng.integers(2, 5), rng.integers(1, 4), rng.integers(2, 6)
    n_cls = int(rng.integers(2, 5))
    g_hidden = [int(rng.integers(3, 9)) for _ in range(rng.integers(1, 3))]
    d_hidden = [int(rng.integers(3, 9)) for _ in range(rng.integers(1, 3))]
    g = init_generator(sem, noise, vis, g_hidden, rng, "tanh" if smooth else "relu", std=0.6)
    d = init_discriminator(vis, d_hidden, list(range(10, 10 + n_cls)), rng,
                           "tanh" if smooth else "leaky_relu", std=0.6)
    for layer in g.net.layers + d.trunk.layers:
        layer.bias[:] = rng.normal(0.0, 0.3, layer.bias.shape)
    assert g.net.n_params() <= MAX_PARAMS and sum(p.size for p in d.params()) <= MAX_PARAMS

    def batch(n):
        return GenBatch(rng.normal(size=(n, sem)), rng.normal(size=(n, noise)),
                        rng.integers(10, 10 + n_cls, n), rng.normal(size=(n, vis)))

    b = int(rng.integers(3, 6))
    problem = {
        "g": g, "d": d,
        "species": batch(b), "genus": batch(b + 1), "family": batch(b + 2),
        "real": rng.normal(size=(b, vis)), "fake": rng.normal(size=(b, vis)),
        "labels": rng.integers(10, 10 + n_cls, b), "mix": rng.random((b, 1)),
    }
    w = rng.dirichlet([1.0, 1.0, 1.0])
    problem["weights"] = TrWeights(float(w[0]), float(w[1]), 1.0 - float(w[0]) - float(w[1]))
    return problem


def _generator_setup(p, term):
    kw = dict(wass_weight=0.0, cls_weight=0.0, weights=TrWeights(0.0, 1.0, 0.0),
              genus=None, family=None)
    if term == "wass_G":
        kw["wass_weight"] = 1.0
    elif term == "cls_G":
        kw["cls_weight"] = 1.0
    elif term == "tr_species":
        kw["weights"] = TrWeights(1.0, 0.0, 0.0)
    elif term == "tr_genus":
        kw.update(genus=p["genus"])
    elif term == "tr_family":
        kw.update(weights=TrWeights(0.0, 0.0, 1.0), family=p["family"])
    elif term == "tr_total":
        kw.update(weights=p["weights"], genus=p["genus"], family=p["family"])
    else:
        kw.update(wass_weight=1.0, cls_weight=1.0, weights=p["weights"], genus=p["genus"],
                  family=p["family"])
    return kw


def _discriminator_setup(term):
    return {
        "wass_D": dict(wass_weight=1.0, gp_weight=0.0, cls_weight=0.0),
        "gp": dict(wass_weight=0.0, gp_weight=1.0, cls_weight=0.0),
        "cls_D": dict(wass_weight=0.0, gp_weight=0.0, cls_weight=1.0),
        "loss_D": dict(wass_weight=1.0, gp_weight=10.0, cls_weight=1.0),
    }[term]


def check_term(p, term: str, eps: float = 1e-5, corrupt: str | None = None):
    """``(max rel. error, max abs. error, checked, skipped)`` for one loss on one problem."""
    if term in GENERATOR_TERMS:
        kw = _generator_setup(p, term)

        def objective():
            return generator_objective(p["g"], p["d"], p["species"], **kw)

        params = p["g"].params()
    else:
        kw = _discriminator_setup(term)

        def objective():
            return discriminator_objective(p["d"], p["real"], p["fake"], p["labels"],
                                           mix=p["mix"], **kw)

        params = p["d"].params()
    analytic = [g.copy() for g in objective().grads]
    if corrupt == term:
        analytic[0].flat[0] += 1e-2 + abs(analytic[0].flat[0])

    def f():
        out = objective()
        return out.value, out.pattern

    numeric = finite_diff_grad(f, params, eps)
    errs = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    abs_err = max(float(np.nanmax(np.abs(a - n), initial=0.0)) for a, n in zip(analytic, numeric))
    skipped = int(sum(np.isnan(n).sum() for n in numeric))
    checked = int(sum(n.size for n in numeric)) - skipped
    return float(max(e.max() for e in errs)), abs_err, checked, skipped


def run_gradcheck(n_nets: int = 20, seed: int = 0, eps: float = 1e-5, tol: float = 1e-4,
                  terms=ALL_TERMS, corrupt: str | None = None) -> list[TermResult]:
    """Check every term on ``n_nets`` random problems (alternating smooth / piecewise-linear)."""
    rng = make_rng(seed, "gradcheck")
    worst = {t: [0.0, 0.0, 0, 0] for t in terms}
    for i in range(n_nets):
        problem = _random_problem(rng, smooth=(i % 2 == 0))
        for term in terms:
            err, abs_err, checked, skipped = check_term(problem, term, eps, corrupt)
            acc = worst[term]
            acc[0] = max(acc[0], err)
            acc[1] = max(acc[1], abs_err)
            acc[2] += checked
            acc[3] += skipped
    return [TermResult(t, *worst[t], tol) for t in terms]


def format_report(results) -> str:
    lines = [f"{'loss':<12} {'max_rel_err':>12} {'max_abs_err':>12} {'checked':>8} {'skipped':>8}"
             "  status"]
    for r in results:
        lines.append(f"{r.name:<12} {r.max_rel_err:>12.3e} {r.max_abs_err:>12.3e} {r.checked:>8d} "
                     f"{r.skipped:>8d}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    lines.append("overall: " + ("PASS" if all(r.passed for r in results) else "FAIL"))
    return "\n".join(lines)
