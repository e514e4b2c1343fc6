"""Dense MLP forward/backward, Adam, seeded RNG and a finite-difference oracle.

Everything is float64 numpy. Weights are stored ``(out, in)`` and applied
to row-major batches, so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFinite, ShapeMismatch

ACTIVATIONS = ("identity", "relu", "leaky_relu", "tanh")

# root seed -> stage seed via SeedSequence([root, code]); PCG64 underneath
STAGE_CODES = {"data": 1, "split": 2, "train": 3, "eval": 4, "gradcheck": 5}


def make_rng(seed: int, stage: str | None = None) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally derived for a named stage."""
    if stage is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    return np.random.Generator(np.random.PCG64(derive_seed(seed, stage)))


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: first 32-bit word of ``SeedSequence([seed, STAGE_CODES[stage]])``."""
    return int(np.random.SeedSequence([int(seed), STAGE_CODES[stage]]).generate_state(1)[0])


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    alpha: float = 0.2

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeMismatch(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeMismatch(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def zeros_like(self) -> "Mlp":
        return Mlp([Layer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation, l.alpha)
                    for l in self.layers])

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)


def init_mlp(sizes: Sequence[int], hidden_activation: str, rng: np.random.Generator,
             output_activation: str = "identity", alpha: float = 0.2, std: float = 0.02) -> Mlp:
    """Weights ~ N(0, std^2), biases zero."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(Layer(rng.normal(0.0, std, size=(n_out, n_in)), np.zeros(n_out), act, alpha))
    return Mlp(layers)


def activate(z: np.ndarray, layer: Layer) -> np.ndarray:
    act = layer.activation
    if act == "identity":
        return z
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "leaky_relu":
        return np.where(z > 0, z, layer.alpha * z)
    return np.tanh(z)


def activation_grad(z: np.ndarray, layer: Layer) -> np.ndarray:
    act = layer.activation
    if act == "identity":
        return np.ones_like(z)
    if act == "relu":
        return (z > 0).astype(np.float64)
    if act == "leaky_relu":
        return np.where(z > 0, 1.0, layer.alpha)
    t = np.tanh(z)
    return 1.0 - t * t


def activation_grad2(z: np.ndarray, layer: Layer) -> np.ndarray:
    """Second derivative; zero almost everywhere for the piecewise-linear ones."""
    if layer.activation == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(z)


@dataclass
class Tape:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]

    def pattern(self) -> np.ndarray:
        """Sign pattern of every pre-activation (kink detector for gradient checks)."""
        if not self.pre:
            return np.zeros(0, dtype=bool)
        return np.concatenate([(z > 0).ravel() for z in self.pre])


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite values in {what}")
    return arr


def mlp_forward(p: Mlp, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != p.in_dim:
        raise ShapeMismatch(f"input has {x.shape[1]} columns, network expects {p.in_dim}")
    tape = Tape([], [])
    a = x
    for layer in p.layers:
        tape.inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        tape.pre.append(z)
        a = activate(z, layer)
    return check_finite(a, "mlp output"), tape


def mlp_backward(p: Mlp, tape: Tape, upstream: np.ndarray) -> tuple[Mlp, np.ndarray]:
    """Reverse pass. Returns ``(param grads shaped like p, grad wrt input)``."""
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != tape.pre[-1].shape:
        raise ShapeMismatch(f"upstream {g.shape} does not match output {tape.pre[-1].shape}")
    grads = []
    for layer, a_in, z in zip(reversed(p.layers), reversed(tape.inputs), reversed(tape.pre)):
        delta = g * activation_grad(z, layer)
        grads.append(Layer(delta.T @ a_in, delta.sum(axis=0), layer.activation, layer.alpha))
        g = delta @ layer.weight
    return Mlp(grads[::-1]), g


def finite_diff_grad(f: Callable, params: Sequence[np.ndarray], eps: float = 1e-5):
    """Central differences of scalar ``f()`` w.r.t. each entry of ``params``.

    ``params`` are perturbed in place and restored. If ``f`` returns
    ``(value, pattern)`` the coordinate is reported as NaN whenever the two
    patterns differ, i.e. a kink of a piecewise-linear activation was crossed.
    """
    out = []
    for arr in params:
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = f()
            flat[i] = orig - eps
            minus = f()
            flat[i] = orig
            if isinstance(plus, tuple):
                (fp, pp), (fm, pm) = plus, minus
                if not np.array_equal(pp, pm):
                    gflat[i] = np.nan
                    continue
                plus, minus = fp, fm
            gflat[i] = (plus - minus) / (2.0 * eps)
        out.append(grad)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|)``, zero wherever ``|a - n| <= floor``.

    The absolute floor absorbs finite-difference roundoff on coordinates whose
    true gradient cancels exactly. NaN numeric entries (skipped) report 0.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), np.finfo(np.float64).tiny)
    err = np.where(diff <= floor, 0.0, diff / scale)
    return np.where(np.isnan(n), 0.0, err)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                    0, beta1, beta2, eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float):
    """Bias-corrected Adam update applied in place; returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        check_finite(g, "gradient")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
