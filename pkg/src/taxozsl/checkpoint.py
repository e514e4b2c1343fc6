"""Version-tagged JSON checkpoints.

Layout (``format_version`` 1)::

    {
      "format": "taxozsl-checkpoint",
      "format_version": 1,
      "seed": int,                 # root seed of the run
      "iteration": int,            # generator updates performed
      "dims": {"semantic": S, "noise": M, "visual": V},
      "generator": {"layers": [LAYER, ...]},
      "discriminator": {
        "classes": [species ids, one per classification logit],
        "trunk": {"layers": [LAYER, ...]},
        "realness": LAYER,         # 1 x width
        "class_head": LAYER        # |classes| x width
      },
      "meta": {...}                # free-form run metadata (split, config)
    }

    LAYER = {"in": int, "out": int, "activation": "identity|relu|leaky_relu|tanh",
             "alpha": float, "weight": [out*in floats, row-major], "bias": [out floats]}

Floats are written with ``repr`` so values round-trip bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError
from .gan import Discriminator, Generator
from .numerics import Layer, Mlp

FORMAT = "taxozsl-checkpoint"
VERSION = 1


def _layer_to_dict(layer: Layer) -> dict:
    return {"in": layer.in_dim, "out": layer.out_dim, "activation": layer.activation,
            "alpha": float(layer.alpha), "weight": layer.weight.ravel().tolist(),
            "bias": layer.bias.tolist()}


def _layer_from_dict(d: dict) -> Layer:
    weight = np.array(d["weight"], dtype=np.float64).reshape(d["out"], d["in"])
    return Layer(weight, np.array(d["bias"], dtype=np.float64), d["activation"], d["alpha"])


def to_dict(g: Generator, d: Discriminator, seed: int, iteration: int, meta: dict | None = None):
    return {
        "format": FORMAT,
        "format_version": VERSION,
        "seed": int(seed),
        "iteration": int(iteration),
        "dims": {"semantic": g.semantic_dim, "noise": g.noise_dim, "visual": g.visual_dim},
        "generator": {"layers": [_layer_to_dict(l) for l in g.net.layers]},
        "discriminator": {
            "classes": list(d.classes),
            "trunk": {"layers": [_layer_to_dict(l) for l in d.trunk.layers]},
            "realness": _layer_to_dict(d.realness),
            "class_head": _layer_to_dict(d.class_head),
        },
        "meta": meta or {},
    }


def from_dict(obj: dict):
    if obj.get("format") != FORMAT:
        raise ParseError("<checkpoint>", 0, f"not a {FORMAT} file")
    if obj.get("format_version") != VERSION:
        raise ParseError("<checkpoint>", 0, f"unsupported version {obj.get('format_version')}")
    g = Generator(Mlp([_layer_from_dict(l) for l in obj["generator"]["layers"]]),
                  obj["dims"]["noise"])
    dd = obj["discriminator"]
    d = Discriminator(Mlp([_layer_from_dict(l) for l in dd["trunk"]["layers"]]),
                      _layer_from_dict(dd["realness"]), _layer_from_dict(dd["class_head"]),
                      tuple(dd["classes"]))
    return g, d, obj


def save(path, g: Generator, d: Discriminator, seed: int, iteration: int, meta=None) -> None:
    text = json.dumps(to_dict(g, d, seed, iteration, meta), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load(path):
    """Return ``(generator, discriminator, raw dict)``."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    return from_dict(obj)
