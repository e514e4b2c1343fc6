"""Conditional WGAN-GP with classification and taxonomy-regularization losses.

The generator maps ``[semantic, noise]`` to a visual feature. The
discriminator is an MLP trunk with two linear heads: a scalar realness
(critic) score and logits over the seen classes.

All gradients are derived by hand; ``gradient_penalty`` differentiates the
critic's input gradient w.r.t. the critic parameters (double backprop).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import CklDataset, Dataset, ckl_expand, compute_centers
from .errors import NonFinite, ShapeMismatch, UnknownLabel, WeightConstraintViolated
from .numerics import (
    AdamState,
    Layer,
    Mlp,
    activation_grad,
    activation_grad2,
    adam_step,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
)
from .taxonomy import Level, Taxonomy

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "loss_D", "wass", "gp", "cls_D", "loss_G", "wass_G", "cls_G",
              "tr_species", "tr_genus", "tr_family")


@dataclass(frozen=True)
class TrWeights:
    species: float = 0.6
    genus: float = 0.2
    family: float = 0.2

    def __post_init__(self):
        vals = (self.species, self.genus, self.family)
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise WeightConstraintViolated(f"TR weights must lie in [0, 1], got {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise WeightConstraintViolated(
                f"TR weights must sum to 1 (species + genus + family), got {sum(vals)!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.species, self.genus, self.family)


@dataclass
class Generator:
    net: Mlp
    noise_dim: int

    @property
    def semantic_dim(self) -> int:
        return self.net.in_dim - self.noise_dim

    @property
    def visual_dim(self) -> int:
        return self.net.out_dim

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def forward(self, t: np.ndarray, z: np.ndarray):
        t = np.atleast_2d(np.asarray(t, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if t.shape[1] != self.semantic_dim or z.shape[1] != self.noise_dim or t.shape[0] != z.shape[0]:
            raise ShapeMismatch(
                f"generator expects ({self.semantic_dim}, {self.noise_dim}) inputs, "
                f"got {t.shape} and {z.shape}")
        return mlp_forward(self.net, np.hstack([t, z]))


@dataclass
class Discriminator:
    trunk: Mlp
    realness: Layer
    class_head: Layer
    classes: tuple[int, ...]

    def __post_init__(self):
        self.classes = tuple(int(c) for c in self.classes)
        if self.realness.in_dim != self.trunk.out_dim or self.class_head.in_dim != self.trunk.out_dim:
            raise ShapeMismatch("discriminator heads must read the trunk output")
        if self.realness.out_dim != 1 or self.class_head.out_dim != len(self.classes):
            raise ShapeMismatch("realness head must be scalar and class head one logit per class")
        self._index = {c: i for i, c in enumerate(self.classes)}

    @property
    def visual_dim(self) -> int:
        return self.trunk.in_dim

    def params(self) -> list[np.ndarray]:
        return self.trunk.params() + [self.realness.weight, self.realness.bias,
                                      self.class_head.weight, self.class_head.bias]

    def label_index(self, labels) -> np.ndarray:
        try:
            return np.array([self._index[int(y)] for y in np.asarray(labels).ravel()], dtype=np.int64)
        except KeyError as exc:
            raise UnknownLabel(f"label {exc.args[0]} has no classification logit") from None

    def forward(self, x: np.ndarray):
        h, tape = mlp_forward(self.trunk, x)
        score = (h @ self.realness.weight.T + self.realness.bias)[:, 0]
        logits = h @ self.class_head.weight.T + self.class_head.bias
        return score, logits, (h, tape)

    def backward(self, cache, d_score: np.ndarray, d_logits: np.ndarray | None):
        """Grads (aligned with ``params()``) and input grad for upstream ``d_score``/``d_logits``."""
        h, tape = cache
        wr, wc = self.realness.weight, self.class_head.weight
        d_score = np.asarray(d_score, dtype=np.float64).reshape(-1, 1)
        dh = d_score @ wr
        g_wr = d_score.T @ h
        g_br = d_score.sum(axis=0)
        if d_logits is None:
            g_wc, g_bc = np.zeros_like(wc), np.zeros_like(self.class_head.bias)
        else:
            dh = dh + d_logits @ wc
            g_wc = d_logits.T @ h
            g_bc = d_logits.sum(axis=0)
        trunk_grads, dx = mlp_backward(self.trunk, tape, dh)
        return trunk_grads.params() + [g_wr, g_br, g_wc, g_bc], dx


def init_generator(semantic_dim: int, noise_dim: int, visual_dim: int, hidden: Sequence[int],
                   rng: np.random.Generator, activation: str = "relu", std: float = 0.02) -> Generator:
    sizes = [semantic_dim + noise_dim, *hidden, visual_dim]
    return Generator(init_mlp(sizes, activation, rng, "identity", std=std), noise_dim)


def init_discriminator(visual_dim: int, hidden: Sequence[int], classes: Sequence[int],
                       rng: np.random.Generator, activation: str = "leaky_relu", alpha: float = 0.2,
                       std: float = 0.02) -> Discriminator:
    if not hidden:
        raise ValueError("discriminator needs at least one hidden layer")
    sizes = [visual_dim, *hidden]
    trunk = init_mlp(sizes, activation, rng, activation, alpha=alpha, std=std)
    width = sizes[-1]
    realness = Layer(rng.normal(0.0, std, (1, width)), np.zeros(1))
    class_head = Layer(rng.normal(0.0, std, (len(classes), width)), np.zeros(len(classes)))
    return Discriminator(trunk, realness, class_head, tuple(classes))


def generate(g: Generator, t, z) -> np.ndarray:
    """Synthesize visual features ``G(t, z)``; 1-D inputs give a 1-D output."""
    single = np.ndim(t) == 1
    out, _ = g.forward(t, z)
    return out[0] if single else out


# ---------------------------------------------------------------- losses

def tr_term(outputs, centers) -> float:
    """Mean over rows of the squared distance to each row's center."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if outputs.shape != centers.shape or outputs.shape[0] == 0:
        raise ShapeMismatch(f"outputs {outputs.shape} vs centers {centers.shape}")
    diff = outputs - centers
    return float(np.sum(diff * diff) / outputs.shape[0])


def tr_term_grad(outputs, centers) -> np.ndarray:
    return 2.0 * (outputs - centers) / outputs.shape[0]


def tr_loss(species_term: float, genus_term: float, family_term: float, w: TrWeights) -> float:
    if not isinstance(w, TrWeights):
        w = TrWeights(*w)
    return w.species * species_term + w.genus * genus_term + w.family * family_term


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_xent(logits: np.ndarray, index: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits`` (labels given as column indices)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != logits.shape[0]:
        raise ShapeMismatch(f"{logits.shape[0]} logit rows vs {index.shape[0]} labels")
    if index.size and (index.min() < 0 or index.max() >= logits.shape[1]):
        raise UnknownLabel(f"label index outside 0..{logits.shape[1] - 1}")
    logp = _log_softmax(logits)
    rows = np.arange(logits.shape[0])
    n = logits.shape[0]
    loss = -float(logp[rows, index].sum() / n)
    grad = np.exp(logp)
    grad[rows, index] -= 1.0
    return loss, grad / n


def classification_loss(class_logits, labels) -> float:
    """Mean softmax cross-entropy; ``labels`` are column indices into the logits."""
    return softmax_xent(class_logits, labels)[0]


def gradient_penalty(d: Discriminator, x: np.ndarray):
    """``mean((||grad_x score(x)|| - 1)^2)`` and its gradient w.r.t. ``d.params()``.

    The critic score's input gradient is formed with an explicit backward
    pass; that pass is then itself reversed to reach the parameters.
    """
    h, tape = mlp_forward(d.trunk, x)
    layers = d.trunk.layers
    n_layers = len(layers)
    batch = x.shape[0]
    wr = d.realness.weight

    # backward pass for u = d score / d x, keeping intermediates
    gs = [None] * (n_layers + 1)
    slopes, deltas = [None] * n_layers, [None] * n_layers
    gs[n_layers] = np.broadcast_to(wr, (batch, wr.shape[1]))
    for l in reversed(range(n_layers)):
        slopes[l] = activation_grad(tape.pre[l], layers[l])
        deltas[l] = gs[l + 1] * slopes[l]
        gs[l] = deltas[l] @ layers[l].weight
    u = gs[0]
    norm = np.sqrt(np.sum(u * u, axis=1))
    value = float(np.mean((norm - 1.0) ** 2))

    # reverse the backward pass
    scale = np.where(norm > 0, (norm - 1.0) / np.where(norm > 0, norm, 1.0), 0.0)
    gbar = (2.0 / batch) * scale[:, None] * u
    w_grads = [np.zeros_like(l.weight) for l in layers]
    b_grads = [np.zeros_like(l.bias) for l in layers]
    curved = any(l.activation == "tanh" for l in layers)
    z_direct = [None] * n_layers
    for l in range(n_layers):
        w_grads[l] += deltas[l].T @ gbar
        dbar = gbar @ layers[l].weight.T
        if curved:
            z_direct[l] = dbar * gs[l + 1] * activation_grad2(tape.pre[l], layers[l])
        gbar = dbar * slopes[l]
    g_wr = gbar.sum(axis=0, keepdims=True)

    # second-derivative terms flow back through the forward pass
    if curved:
        zbar = z_direct[-1]
        for l in reversed(range(n_layers)):
            w_grads[l] += zbar.T @ tape.inputs[l]
            b_grads[l] += zbar.sum(axis=0)
            if l > 0:
                zbar = z_direct[l - 1] + (zbar @ layers[l].weight) * activation_grad(
                    tape.pre[l - 1], layers[l - 1])

    grads = []
    for gw, gb in zip(w_grads, b_grads):
        grads += [gw, gb]
    grads += [g_wr, np.zeros_like(d.realness.bias),
              np.zeros_like(d.class_head.weight), np.zeros_like(d.class_head.bias)]
    return value, grads, tape


@dataclass
class DiscriminatorLoss:
    value: float
    wass: float
    gp: float
    cls: float
    grads: list
    tapes: list = field(repr=False, default_factory=list)

    @property
    def pattern(self) -> np.ndarray:
        return np.concatenate([t.pattern() for t in self.tapes])


def discriminator_objective(d: Discriminator, real, fake, labels_real, gp_weight: float = 10.0,
                            mix=None, cls_weight: float = 1.0, wass_weight: float = 1.0,
                            rng: np.random.Generator | None = None) -> DiscriminatorLoss:
    """Critic loss ``mean(D(fake)) - mean(D(real)) + gp_weight * GP + cls_weight * CE(real)``.

    ``mix`` holds per-row interpolation coefficients for the penalty points;
    when omitted they are drawn uniformly from ``rng``.
    """
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake, dtype=np.float64))
    if real.shape[1] != d.visual_dim or fake.shape[1] != d.visual_dim:
        raise ShapeMismatch(f"real {real.shape} / fake {fake.shape} vs critic width {d.visual_dim}")
    s_real, logits_real, cache_real = d.forward(real)
    s_fake, _, cache_fake = d.forward(fake)
    wass = float(s_fake.mean() - s_real.mean())
    cls, d_logits = softmax_xent(logits_real, d.label_index(labels_real))

    grads_real, _ = d.backward(cache_real, np.full(real.shape[0], -wass_weight / real.shape[0]),
                               cls_weight * d_logits)
    grads_fake, _ = d.backward(cache_fake, np.full(fake.shape[0], wass_weight / fake.shape[0]), None)
    grads = [a + b for a, b in zip(grads_real, grads_fake)]
    tapes = [cache_real[1], cache_fake[1]]

    gp = 0.0
    if gp_weight:
        if real.shape != fake.shape:
            raise ShapeMismatch("gradient penalty needs equally sized real and fake batches")
        if mix is None:
            mix = (rng or make_rng(0)).random((real.shape[0], 1))
        mix = np.asarray(mix, dtype=np.float64).reshape(-1, 1)
        gp, gp_grads, gp_tape = gradient_penalty(d, mix * real + (1.0 - mix) * fake)
        grads = [a + gp_weight * b for a, b in zip(grads, gp_grads)]
        tapes.append(gp_tape)
    value = wass_weight * wass + gp_weight * gp + cls_weight * cls
    return DiscriminatorLoss(value, wass, gp, cls, grads, tapes)


def discriminator_loss(d: Discriminator, real, fake, labels_real, gp_weight: float = 10.0,
                       **kwargs) -> float:
    return discriminator_objective(d, real, fake, labels_real, gp_weight, **kwargs).value


def generator_loss(d: Discriminator, fake, labels, tr: float = 0.0, cls_weight: float = 1.0) -> float:
    """``-mean(D(fake)) + cls_weight * CE(fake) + tr`` for a batch of generated features."""
    fake = np.atleast_2d(np.asarray(fake, dtype=np.float64))
    if fake.shape[1] != d.visual_dim:
        raise ShapeMismatch(f"fake width {fake.shape[1]} vs critic width {d.visual_dim}")
    score, logits, _ = d.forward(fake)
    cls = classification_loss(logits, d.label_index(labels)) if cls_weight else 0.0
    return float(-score.mean() + cls_weight * cls + tr)


@dataclass
class GenBatch:
    """Generator inputs for one level plus the row-aligned TR targets."""

    semantics: np.ndarray
    noise: np.ndarray
    labels: np.ndarray
    centers: np.ndarray


@dataclass
class GeneratorLoss:
    value: float
    wass: float
    cls: float
    tr_species: float
    tr_genus: float
    tr_family: float
    tr: float
    grads: list
    tapes: list = field(repr=False, default_factory=list)

    @property
    def pattern(self) -> np.ndarray:
        return np.concatenate([t.pattern() for t in self.tapes])


def generator_objective(g: Generator, d: Discriminator, species: GenBatch,
                        genus: GenBatch | None = None, family: GenBatch | None = None,
                        weights: TrWeights = TrWeights(), cls_weight: float = 1.0,
                        wass_weight: float = 1.0) -> GeneratorLoss:
    """Full generator loss and its gradient w.r.t. ``g.params()``; ``d`` stays frozen.

    The Wasserstein and classification terms and the species TR term share
    the species batch. Genus and family TR terms each take their own batch of
    cross-knowledge pairs and are averaged over that batch.
    """
    if not isinstance(weights, TrWeights):
        weights = TrWeights(*weights)
    fake, tape = g.forward(species.semantics, species.noise)
    n = fake.shape[0]
    score, logits, cache = d.forward(fake)
    wass = float(-score.mean())
    cls, d_logits = softmax_xent(logits, d.label_index(species.labels))
    _, d_fake = d.backward(cache, np.full(n, -wass_weight / n), cls_weight * d_logits)
    tr_s = tr_term(fake, species.centers)
    d_fake = d_fake + weights.species * tr_term_grad(fake, species.centers)
    grads_net, _ = mlp_backward(g.net, tape, d_fake)
    grads = grads_net.params()
    tapes = [tape, cache[1]]

    terms = {}
    for name, batch, w in (("genus", genus, weights.genus), ("family", family, weights.family)):
        if batch is None:
            terms[name] = 0.0
            continue
        out, t_tape = g.forward(batch.semantics, batch.noise)
        terms[name] = tr_term(out, batch.centers)
        if w:
            extra, _ = mlp_backward(g.net, t_tape, w * tr_term_grad(out, batch.centers))
            grads = [a + b for a, b in zip(grads, extra.params())]
        tapes.append(t_tape)
    tr = tr_loss(tr_s, terms["genus"], terms["family"], weights)
    value = wass_weight * wass + cls_weight * cls + tr
    return GeneratorLoss(value, wass, cls, tr_s, terms["genus"], terms["family"], tr, grads, tapes)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 64
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    critic_steps: int = 5
    gp_weight: float = 10.0
    cls_weight: float = 1.0
    weights: TrWeights = TrWeights()
    noise_dim: int = 16
    n_synth: int = 60
    g_hidden: tuple[int, ...] = (64,)
    d_hidden: tuple[int, ...] = (64,)
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.weights, TrWeights):
            object.__setattr__(self, "weights", TrWeights(*self.weights))
        object.__setattr__(self, "g_hidden", tuple(int(h) for h in self.g_hidden))
        object.__setattr__(self, "d_hidden", tuple(int(h) for h in self.d_hidden))
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("batch_size", "critic_steps", "noise_dim", "n_synth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be > 0")
        if self.gp_weight < 0 or self.cls_weight < 0:
            raise ValueError("loss weights must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: list[tuple]
    iteration: int

    def tr_curve(self, weights: TrWeights) -> np.ndarray:
        rows = np.array([r[8:11] for r in self.log]) if self.log else np.zeros((0, 3))
        return rows @ np.array(weights.as_tuple())


def _sample(pairs: CklDataset, targets: np.ndarray, size: int, noise_dim: int,
            rng: np.random.Generator):
    idx = rng.integers(0, len(pairs), size)
    return idx, GenBatch(pairs.semantics[idx], rng.standard_normal((size, noise_dim)),
                         pairs.labels[idx], targets[idx])


def train(seen: Dataset, tax: Taxonomy, cfg: TrainConfig,
          init: tuple[Generator, Discriminator] | None = None) -> TrainResult:
    """Adversarial training over cross-knowledge pairs with taxonomy regularization.

    Each iteration runs ``critic_steps`` critic updates on species-level
    pairs, then one generator update whose loss adds the weighted species,
    genus and family TR terms.
    """
    centers = compute_centers(seen, tax)
    levels = {lvl: ckl_expand(seen, tax, lvl) for lvl in Level}
    targets = {lvl: centers.for_labels(pairs.labels, tax, lvl) for lvl, pairs in levels.items()}
    rng = make_rng(cfg.seed)
    if init is None:
        g = init_generator(seen.semantic_dim, cfg.noise_dim, seen.visual_dim, cfg.g_hidden, rng)
        d = init_discriminator(seen.visual_dim, cfg.d_hidden, seen.classes, rng)
    else:
        g, d = init
    g_state = AdamState.for_params(g.params(), cfg.beta1, cfg.beta2)
    d_state = AdamState.for_params(d.params(), cfg.beta1, cfg.beta2)
    species = levels[Level.SPECIES]
    history = []
    for it in range(cfg.iterations):
        try:
            for _ in range(cfg.critic_steps):
                idx, batch = _sample(species, targets[Level.SPECIES], cfg.batch_size, cfg.noise_dim, rng)
                fake, _ = g.forward(batch.semantics, batch.noise)
                dl = discriminator_objective(d, species.features[idx], fake, batch.labels,
                                             cfg.gp_weight, rng.random((cfg.batch_size, 1)),
                                             cfg.cls_weight)
                adam_step(d.params(), dl.grads, d_state, cfg.lr_d)
            _, sb = _sample(species, targets[Level.SPECIES], cfg.batch_size, cfg.noise_dim, rng)
            _, gb = _sample(levels[Level.GENUS], targets[Level.GENUS], cfg.batch_size,
                            cfg.noise_dim, rng)
            _, fb = _sample(levels[Level.FAMILY], targets[Level.FAMILY], cfg.batch_size,
                            cfg.noise_dim, rng)
            gl = generator_objective(g, d, sb, gb, fb, cfg.weights, cfg.cls_weight)
            adam_step(g.params(), gl.grads, g_state, cfg.lr_g)
        except NonFinite as exc:
            raise NonFinite(f"iteration {it}: {exc}") from None
        row = (it, dl.value, dl.wass, dl.gp, dl.cls, gl.value, gl.wass, gl.cls,
               gl.tr_species, gl.tr_genus, gl.tr_family)
        if not np.all(np.isfinite(row)):
            raise NonFinite(f"iteration {it}: non-finite loss component")
        history.append(row)
        if it % 500 == 0:
            log.debug("iter %d loss_D %.4f loss_G %.4f", it, dl.value, gl.value)
    return TrainResult(g, d, history, cfg.iterations)
