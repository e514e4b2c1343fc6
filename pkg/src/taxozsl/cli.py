"""``taxozsl`` command line.

Every subcommand is a pure function of (config file, overrides, seed) to the
bytes it writes under ``--out``. Randomness is derived per stage from the root
seed: ``data`` (synthetic features), ``split`` (seen/unseen and holdout),
``train`` (initialisation and minibatches), ``eval`` (synthesized banks) and
``gradcheck``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .config import RunConfig, load_config, require_paths, with_paths
from .data import (
    Dataset,
    fmt,
    holdout_split,
    load_dataset,
    read_corpus,
    synth_dataset,
    tfidf_featurize,
    write_semantics,
    write_visual,
)
from .errors import ConfigError, EmptyQuerySet, TaxoZslError
from .gan import LOG_FIELDS, train
from .gradcheck import ALL_TERMS, format_report, run_gradcheck
from .numerics import derive_seed, make_rng
from .taxonomy import (
    SplitSpec,
    Taxonomy,
    build_taxonomy,
    make_split,
    read_taxonomy,
    write_split,
    write_taxonomy,
)
from .zsl_eval import (
    SynthesizedBank,
    classify_batch,
    default_grid,
    export_embedding,
    harmonic_mean,
    mean_average_precision,
    per_class_accuracy,
    retrieve,
    suc_from_scores,
    synthesize_bank,
    top1_per_class,
)

log = logging.getLogger("taxozsl")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- shared data preparation

def synth_taxonomy(cfg: RunConfig) -> Taxonomy:
    """Balanced tree: genus ids run across families, species ids across genera."""
    s = cfg.synth
    records, species = [], 0
    for f in range(s.families):
        for gi in range(s.genera_per_family):
            for _ in range(s.species_per_genus):
                records.append((species, f * s.genera_per_family + gi, f))
                species += 1
    return build_taxonomy(records)


@dataclass
class Prepared:
    tax: Taxonomy
    data: Dataset
    seen: frozenset
    unseen: frozenset
    train: Dataset       # seen classes minus the holdout
    heldout: Dataset     # seen-class queries for GZSL
    test: Dataset        # every unseen-class sample


def load_or_synth(cfg: RunConfig) -> tuple[Taxonomy, Dataset]:
    """File-backed data when ``[paths] visual`` is set, synthetic data otherwise."""
    if cfg.paths.visual is not None:
        require_paths(cfg, "taxonomy", "visual", "semantic")
        if cfg.paths.labels is not None:
            require_paths(cfg, "labels")
        tax = read_taxonomy(cfg.paths.taxonomy)
        ds = load_dataset(cfg.paths.visual, cfg.paths.semantic, tax, cfg.paths.labels)
        missing = sorted(set(ds.classes) - set(ds.semantics))
        if missing:
            raise ConfigError(f"[paths] semantic: no semantic row for classes {missing}")
        return tax, ds
    tax = synth_taxonomy(cfg)
    s = cfg.synth
    ds = synth_dataset(tax, s.per_class, s.visual_dim, s.semantic_dim, s.noise_scale,
                       derive_seed(cfg.seed, "data"))
    return tax, ds


def prepare(cfg: RunConfig) -> Prepared:
    tax, ds = load_or_synth(cfg)
    rng = make_rng(cfg.seed, "split")
    spec = SplitSpec(cfg.split.mode, cfg.split.unseen_fraction, cfg.seed)
    seen, unseen = make_split(tax, spec, rng)
    seen_ds = ds.restrict_classes(seen)
    tr, held = holdout_split(seen_ds, cfg.split.holdout_fraction, rng)
    return Prepared(tax, ds, seen, unseen, tr, held, ds.restrict_classes(unseen))


def _checkpoint_path(cfg: RunConfig) -> Path:
    path = cfg.paths.checkpoint or Path(cfg.out) / "checkpoint.json"
    if not path.exists():
        raise ConfigError(f"[paths] checkpoint: {path} does not exist (run `train` first)")
    return path


def _banks(cfg: RunConfig, g, prep: Prepared):
    """``(unseen-only bank, GZSL bank)``; both drawn from the eval-stage stream."""
    rng = make_rng(cfg.seed, "eval")
    n = cfg.eval.n_synth
    sem = prep.data.semantics
    unseen_bank = synthesize_bank(g, {c: sem[c] for c in sorted(prep.unseen)}, n, rng)
    if cfg.eval.gzsl_seen_bank == "real":
        groups = {c: prep.train.features[prep.train.labels == c] for c in sorted(prep.seen)}
    else:
        seen_bank = synthesize_bank(g, {c: sem[c] for c in sorted(prep.seen)}, n, rng)
        groups = {c: seen_bank.of(c) for c in seen_bank.classes}
    groups.update({c: unseen_bank.of(c) for c in unseen_bank.classes})
    return unseen_bank, SynthesizedBank.from_groups(groups)


# ---------------------------------------------------------------- commands

def cmd_synth_data(cfg: RunConfig, args) -> int:
    tax = synth_taxonomy(cfg)
    s = cfg.synth
    ds = synth_dataset(tax, s.per_class, s.visual_dim, s.semantic_dim, s.noise_scale,
                       derive_seed(cfg.seed, "data"))
    out = _out_dir(cfg)
    write_taxonomy(tax, out / "taxonomy.csv")
    write_visual(ds, out / "visual.csv")
    write_semantics(ds.semantics, out / "semantic.csv")
    print(f"classes={tax.n_species} genera={len(tax.genera)} families={len(tax.families)} "
          f"samples={ds.n} visual_dim={ds.visual_dim} semantic_dim={ds.semantic_dim}")
    return 0


def cmd_featurize(cfg: RunConfig, args) -> int:
    if args.corpus is not None:
        cfg = with_paths(cfg, corpus=Path(args.corpus))
    require_paths(cfg, "corpus")
    limit = args.vocab_limit if args.vocab_limit is not None else cfg.eval.vocab_limit
    vectors, vocab = tfidf_featurize(read_corpus(cfg.paths.corpus), limit)
    out = _out_dir(cfg)
    write_semantics(vectors, out / "semantic.csv")
    (out / "vocab.txt").write_text("".join(t + "\n" for t in vocab), encoding="utf-8")
    print(f"documents={len(vectors)} vocabulary={len(vocab)}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    prep = prepare(cfg)
    tcfg = cfg.train.replace(seed=derive_seed(cfg.seed, "train"))
    result = train(prep.train, prep.tax, tcfg)
    out = _out_dir(cfg)
    meta = {"seen": sorted(prep.seen), "unseen": sorted(prep.unseen),
            "weights": list(tcfg.weights.as_tuple()), "train_samples": prep.train.n}
    checkpoint.save(out / "checkpoint.json", result.generator, result.discriminator, cfg.seed,
                    result.iteration, meta)
    write_split(prep.seen, prep.unseen, out / "split.csv")
    with (out / "train_log.csv").open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(LOG_FIELDS)
        for row in result.log:
            w.writerow([row[0]] + [fmt(v) for v in row[1:]])
    last = result.log[-1] if result.log else None
    tail = f" loss_D={last[1]:.4f} loss_G={last[5]:.4f}" if last else ""
    print(f"iterations={result.iteration} seen={len(prep.seen)} unseen={len(prep.unseen)}{tail}")
    return 0


def _check_split(obj: dict, prep: Prepared, path: Path) -> None:
    meta = obj.get("meta", {})
    if "unseen" in meta and sorted(meta["unseen"]) != sorted(prep.unseen):
        raise ConfigError(f"{path}: checkpoint was trained on a different split than this config")


def cmd_eval(cfg: RunConfig, args) -> int:
    prep = prepare(cfg)
    if prep.heldout.n == 0:
        raise EmptyQuerySet("[split] holdout_fraction leaves no seen-class queries for GZSL")
    path = _checkpoint_path(cfg)
    g, _, obj = checkpoint.load(path)
    _check_split(obj, prep, path)
    unseen_bank, gzsl_bank = _banks(cfg, g, prep)
    k = cfg.eval.k
    unseen_cls = sorted(prep.unseen)
    seen_cls = sorted(prep.seen)

    zsl_pred, _ = classify_batch(unseen_bank, prep.test.features, k)
    zsl = per_class_accuracy(prep.test.labels, zsl_pred, unseen_cls)
    pred_u, scores_u = classify_batch(gzsl_bank, prep.test.features, k)
    pred_s, scores_s = classify_batch(gzsl_bank, prep.heldout.features, k)
    gzsl_u = per_class_accuracy(prep.test.labels, pred_u, unseen_cls)
    gzsl_s = per_class_accuracy(prep.heldout.labels, pred_s, seen_cls)
    u = top1_per_class(prep.test.labels, pred_u, unseen_cls)
    s = top1_per_class(prep.heldout.labels, pred_s, seen_cls)
    h = harmonic_mean(u, s) if u + s > 0 else 0.0
    grid = default_grid(np.vstack([scores_s, scores_u]), cfg.eval.grid_size)
    curve = suc_from_scores(scores_s, prep.heldout.labels, scores_u, prep.test.labels,
                            gzsl_bank.classes, prep.seen, grid)

    out = _out_dir(cfg)
    report = [
        ("seed", cfg.seed), ("checkpoint_iteration", obj["iteration"]),
        ("k", k), ("n_synth", cfg.eval.n_synth), ("gzsl_seen_bank", cfg.eval.gzsl_seen_bank),
        ("n_seen_classes", len(seen_cls)), ("n_unseen_classes", len(unseen_cls)),
        ("n_seen_queries", prep.heldout.n), ("n_unseen_queries", prep.test.n),
        ("top1_unseen", fmt(float(np.mean(list(zsl.values()))))),
        ("gzsl_seen", fmt(s)), ("gzsl_unseen", fmt(u)), ("gzsl_h", fmt(h)),
        ("ausuc", fmt(curve.area)), ("grid_size", len(grid)),
    ]
    (out / "report.txt").write_text("".join(f"{key}={val}\n" for key, val in report))
    with (out / "suc.csv").open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["offset", "seen_acc", "unseen_acc"])
        for off, a_s, a_u in curve.points():
            w.writerow([fmt(off), fmt(a_s), fmt(a_u)])
    with (out / "per_class.csv").open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["species_id", "split", "zsl_top1", "gzsl_top1"])
        for c in seen_cls:
            w.writerow([c, "seen", "", fmt(gzsl_s[c])])
        for c in unseen_cls:
            w.writerow([c, "unseen", fmt(zsl[c]), fmt(gzsl_u[c])])
    feats = np.vstack([prep.test.features, unseen_bank.features])
    labels = np.concatenate([prep.test.labels,
                             np.asarray(unseen_bank.classes)[unseen_bank.class_index]])
    kinds = ["real"] * prep.test.n + ["synth"] * unseen_bank.features.shape[0]
    with (out / "embedding.csv").open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["label", "kind", "pc1", "pc2"])
        for lab, kind, p1, p2 in export_embedding(feats, labels, kinds):
            w.writerow([lab, kind, fmt(p1), fmt(p2)])
    for key, val in report[9:14]:
        print(f"{key}={val}")
    return 0


def _fraction_label(f: float) -> str:
    return f"ap@{round(f * 100):d}"


def cmd_retrieve(cfg: RunConfig, args) -> int:
    prep = prepare(cfg)
    path = _checkpoint_path(cfg)
    g, _, obj = checkpoint.load(path)
    _check_split(obj, prep, path)
    bank, _ = _banks(cfg, g, prep)
    fractions = tuple(args.fractions) if args.fractions else cfg.eval.fractions
    feats, labels = prep.test.features, prep.test.labels
    classes = sorted(prep.unseen)
    table = {f: mean_average_precision(bank, feats, labels, f, classes) for f in fractions}
    out = _out_dir(cfg)
    with (out / "map.csv").open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["species_id"] + [_fraction_label(f) for f in fractions])
        for c in classes:
            w.writerow([c] + [fmt(table[f][1][c]) for f in fractions])
        w.writerow(["mAP"] + [fmt(table[f][0]) for f in fractions])
    with (out / "ranked.csv").open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["species_id", "fraction", "rank", "gallery_index", "gallery_label"])
        for f in fractions:
            for c in classes:
                order, _ = retrieve(bank, c, feats, labels, f)
                for rank, i in enumerate(order.tolist(), start=1):
                    w.writerow([c, fmt(f), rank, i, int(labels[i])])
    print(" ".join(f"mAP{_fraction_label(f)[2:]}={table[f][0]:.4f}" for f in fractions))
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    results = run_gradcheck(n_nets=args.nets, seed=cfg.seed, eps=args.eps, tol=args.tol,
                            corrupt=args.corrupt)
    report = format_report(results)
    out = _out_dir(cfg)
    (out / "gradcheck.txt").write_text(report + "\n")
    print(report)
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="root seed (overrides [run] seed)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="taxozsl", description=(
        "Taxonomy-regularized generative zero-shot learning on precomputed features."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("synth-data", parents=[common], help="write a synthetic taxonomy and dataset")
    p = sub.add_parser("featurize", parents=[common], help="TF-IDF semantics from a text corpus")
    p.add_argument("--corpus", metavar="DIR", help="one <species_id>.txt per class")
    p.add_argument("--vocab-limit", type=int, metavar="N")
    sub.add_parser("train", parents=[common], help="train the generator on seen classes")
    sub.add_parser("eval", parents=[common], help="ZSL / GZSL metrics and embedding export")
    p = sub.add_parser("retrieve", parents=[common], help="unseen-class retrieval mAP")
    p.add_argument("--fractions", type=float, nargs="+", metavar="F")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--nets", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", choices=ALL_TERMS, help=argparse.SUPPRESS)
    return parser


COMMANDS = {
    "synth-data": cmd_synth_data,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except TaxoZslError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
