"""Run configuration: one INI file, overridable key by key from the command line.

Sections and keys (all optional; defaults shown by ``RunConfig()``)::

    [run]    seed, out
    [paths]  taxonomy, visual, semantic, labels, corpus, checkpoint
    [synth]  families, genera_per_family, species_per_genus, per_class,
             visual_dim, semantic_dim, noise_scale
    [split]  mode (easy|hard), unseen_fraction, holdout_fraction
    [train]  iterations, batch_size, lr_g, lr_d, critic_steps, gp_weight,
             cls_weight, lambda_species, lambda_genus, lambda_family,
             noise_dim, g_hidden, d_hidden, beta1, beta2
    [eval]   n_synth, k, grid_size, gzsl_seen_bank (synth|real), fractions,
             vocab_limit

List values (hidden sizes, fractions) are comma separated.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, WeightConstraintViolated
from .gan import TrainConfig, TrWeights
from .taxonomy import SplitMode


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class SynthSpec:
    families: int = 3
    genera_per_family: int = 2
    species_per_genus: int = 2
    per_class: int = 40
    visual_dim: int = 8
    semantic_dim: int = 6
    noise_scale: float = 1.0


@dataclass(frozen=True)
class Paths:
    taxonomy: Path | None = None
    visual: Path | None = None
    semantic: Path | None = None
    labels: Path | None = None
    corpus: Path | None = None
    checkpoint: Path | None = None


@dataclass(frozen=True)
class SplitOptions:
    mode: SplitMode = SplitMode.EASY
    unseen_fraction: float = 1.0 / 3.0
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class EvalOptions:
    n_synth: int = 60
    k: int = 1
    grid_size: int = 201
    gzsl_seen_bank: str = "synth"
    fractions: tuple[float, ...] = (0.25, 0.5, 1.0)
    vocab_limit: int | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: Path = Path("out")
    paths: Paths = field(default_factory=Paths)
    synth: SynthSpec = field(default_factory=SynthSpec)
    split: SplitOptions = field(default_factory=SplitOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)


# section -> key -> converter
_TRAIN_KEYS = {
    "iterations": int, "batch_size": int, "lr_g": float, "lr_d": float, "critic_steps": int,
    "gp_weight": float, "cls_weight": float, "noise_dim": int, "g_hidden": _ints,
    "d_hidden": _ints, "beta1": float, "beta2": float,
}
_LAMBDA_KEYS = ("lambda_species", "lambda_genus", "lambda_family")
_SCHEMA = {
    "run": {"seed": int, "out": Path},
    "paths": {f.name: Path for f in fields(Paths)},
    "synth": {f.name: (float if f.name == "noise_scale" else int) for f in fields(SynthSpec)},
    "split": {"mode": lambda s: SplitMode(s.lower()), "unseen_fraction": float,
              "holdout_fraction": float},
    "train": {**_TRAIN_KEYS, **{k: float for k in _LAMBDA_KEYS}},
    "eval": {"n_synth": int, "k": int, "grid_size": int, "gzsl_seen_bank": str,
             "fractions": _floats, "vocab_limit": int},
}


def _convert(section: str, key: str, raw: str, where: str):
    try:
        conv = _SCHEMA[section][key]
    except KeyError:
        raise ConfigError(f"{where}: unknown key [{section}] {key}") from None
    try:
        return conv(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for [{section}] {key}: {raw!r} ({exc})") from None


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> ``(section, key, value)``."""
    lhs, sep, value = text.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    return section, key, value


def load_config(path=None, overrides=(), seed: int | None = None, out=None) -> RunConfig:
    """Read ``path`` (optional), apply ``section.key=value`` overrides, then flags.

    Flags (``seed``, ``out``) win over both the file and overrides. Relative
    paths in the file resolve against the file's directory, those given as
    overrides against the working directory.
    """
    values: dict[str, dict[str, object]] = {s: {} for s in _SCHEMA}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                value = _convert(section, key, raw, str(path))
                if isinstance(value, Path) and not value.is_absolute():
                    value = path.parent / value
                values[section][key] = value
    for text in overrides:
        section, key, raw = parse_override(text)
        if section not in _SCHEMA:
            raise ConfigError(f"--set {text}: unknown section [{section}]")
        values[section][key] = _convert(section, key, raw, "--set")
    if seed is not None:
        values["run"]["seed"] = int(seed)
    if out is not None:
        values["run"]["out"] = Path(out)

    paths = Paths(**values["paths"])
    tr = values["train"]
    lam = [tr.pop(k, d) for k, d in zip(_LAMBDA_KEYS, TrWeights().as_tuple())]
    try:
        weights = TrWeights(*lam)
    except WeightConstraintViolated as exc:
        raise WeightConstraintViolated(f"[train] lambda_species/genus/family: {exc}") from None
    run_seed = values["run"].get("seed", 0)
    try:
        train_cfg = TrainConfig(weights=weights, seed=run_seed, **tr)
        split = SplitOptions(**values["split"])
        ev = EvalOptions(**values["eval"])
        synth = SynthSpec(**values["synth"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    if ev.gzsl_seen_bank not in ("synth", "real"):
        raise ConfigError(f"[eval] gzsl_seen_bank must be synth or real, got {ev.gzsl_seen_bank!r}")
    if not ev.fractions or any(not 0.0 < f <= 1.0 for f in ev.fractions):
        raise ConfigError("[eval] fractions must lie in (0, 1]")
    if ev.n_synth < 1 or ev.k < 1 or ev.grid_size < 1:
        raise ConfigError("[eval] n_synth, k and grid_size must be >= 1")
    if not 0.0 <= split.holdout_fraction < 1.0:
        raise ConfigError("[split] holdout_fraction must lie in [0, 1)")
    if not 0.0 < split.unseen_fraction < 1.0:
        raise ConfigError("[split] unseen_fraction must lie in (0, 1)")
    for name in ("families", "genera_per_family", "species_per_genus", "per_class",
                 "visual_dim", "semantic_dim"):
        if getattr(synth, name) < 1:
            raise ConfigError(f"[synth] {name} must be >= 1")
    if synth.noise_scale < 0:
        raise ConfigError("[synth] noise_scale must be >= 0")
    return RunConfig(seed=run_seed, out=values["run"].get("out", Path("out")), paths=paths,
                     synth=synth, split=split, train=train_cfg, eval=ev)


def require_paths(cfg: RunConfig, *names: str) -> None:
    """Fail early, naming the key, if a needed input path is unset or missing."""
    for name in names:
        p = getattr(cfg.paths, name)
        if p is None:
            raise ConfigError(f"[paths] {name} is required for this command")
        if not p.exists():
            raise ConfigError(f"[paths] {name}: {p} does not exist")


def with_paths(cfg: RunConfig, **paths) -> RunConfig:
    return replace(cfg, paths=replace(cfg.paths, **paths))
