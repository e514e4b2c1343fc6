import math

import numpy as np
import pytest

from conftest import balanced_taxonomy
from taxozsl import checkpoint
from taxozsl.data import synth_dataset
from taxozsl.errors import NonFinite, ShapeMismatch, UnknownLabel, WeightConstraintViolated
from taxozsl.gan import (
    Discriminator,
    GenBatch,
    Generator,
    TrainConfig,
    TrWeights,
    classification_loss,
    discriminator_objective,
    generate,
    generator_loss,
    generator_objective,
    gradient_penalty,
    init_discriminator,
    init_generator,
    tr_loss,
    tr_term,
    train,
)
from taxozsl.gradcheck import ALL_TERMS, format_report, run_gradcheck
from taxozsl.numerics import Layer, Mlp


@pytest.fixture
def nets():
    rng = np.random.default_rng(0)
    g = init_generator(3, 2, 4, [5], rng, std=0.5)
    d = init_discriminator(4, [6], [0, 1, 2], rng, std=0.5)
    return g, d, rng


# ---------------------------------------------------------------- generator

def test_zero_generator_outputs_zero():
    g = init_generator(3, 2, 4, [5], np.random.default_rng(0), std=0.0)
    assert np.all(generate(g, np.ones(3), np.ones(2)) == 0.0)


def test_generate_deterministic_and_shaped(nets):
    g, _, rng = nets
    t, z = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    a, b = generate(g, t, z), generate(g, t, z)
    assert a.shape == (7, 4) and np.array_equal(a, b)
    with pytest.raises(ShapeMismatch):
        generate(g, np.ones(2), np.ones(2))


# ---------------------------------------------------------------- TR

def test_tr_term_examples():
    assert tr_term([[0.0, 0.0]], [[1.0, 0.0]]) == 1.0
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert tr_term(x, x) == 0.0


def test_tr_term_matches_loop_oracle():
    rng = np.random.default_rng(2)
    out, cen = rng.normal(size=(9, 4)), rng.normal(size=(9, 4))
    total = 0.0
    for i in range(9):
        for j in range(4):
            total += (out[i, j] - cen[i, j]) ** 2
    assert abs(tr_term(out, cen) - total / 9) < 1e-12
    perm = rng.permutation(9)
    assert abs(tr_term(out[perm], cen[perm]) - tr_term(out, cen)) < 1e-12


def test_tr_loss_identities():
    assert tr_loss(2.5, 7.0, 9.0, TrWeights(1.0, 0.0, 0.0)) == 2.5
    assert tr_loss(3.0, 6.0, 9.0, TrWeights(1 / 3, 1 / 3, 1 / 3)) == pytest.approx(6.0, abs=1e-12)
    w = TrWeights(0.5, 0.3, 0.2)
    assert tr_loss(2 * 1.0, 2 * 4.0, 2 * 5.0, w) == pytest.approx(2 * tr_loss(1.0, 4.0, 5.0, w))
    with pytest.raises(WeightConstraintViolated):
        tr_loss(1.0, 1.0, 1.0, (0.5, 0.3, 0.3))
    with pytest.raises(WeightConstraintViolated):
        TrWeights(1.2, -0.2, 0.0)


def test_frozen_center_generator_has_zero_tr_gradient():
    centers = np.array([1.0, -2.0, 0.5])
    net = Mlp([Layer(np.zeros((3, 4)), centers.copy())])
    g = Generator(net, 2)
    d = init_discriminator(3, [4], [0, 1], np.random.default_rng(0))
    rng = np.random.default_rng(3)
    batch = GenBatch(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), np.zeros(5, int),
                     np.tile(centers, (5, 1)))
    res = generator_objective(g, d, batch, weights=TrWeights(1.0, 0.0, 0.0), cls_weight=0.0,
                              wass_weight=0.0)
    assert res.tr == 0.0
    assert all(np.all(gr == 0.0) for gr in res.grads)


# ---------------------------------------------------------------- classification

def test_classification_loss_uniform_and_margin():
    assert classification_loss(np.zeros((4, 5)), np.array([0, 1, 2, 3])) == pytest.approx(math.log(5))
    small = classification_loss(np.array([[10.0, 0.0]]), np.array([0]))
    large = classification_loss(np.array([[40.0, 0.0]]), np.array([0]))
    assert large < small < 1e-4


def test_classification_loss_direct_oracle():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 4)) * 3
    labels = rng.integers(0, 4, 6)
    ref = np.mean([-logits[i, labels[i]] + math.log(sum(math.exp(v) for v in logits[i]))
                   for i in range(6)])
    assert abs(classification_loss(logits, labels) - ref) < 1e-12
    with pytest.raises(UnknownLabel):
        classification_loss(logits, np.array([0, 1, 2, 3, 4, 5]))


# ---------------------------------------------------------------- critic / generator losses

def test_generator_loss_term_isolation_and_additivity(nets):
    g, d, rng = nets
    fake = rng.normal(size=(5, 4))
    labels = np.array([0, 1, 2, 0, 1])
    score, logits, _ = d.forward(fake)
    assert generator_loss(d, fake, labels, 0.0, cls_weight=0.0) == pytest.approx(-score.mean())
    ce = classification_loss(logits, d.label_index(labels))
    assert generator_loss(d, fake, labels, 0.7) == pytest.approx(-score.mean() + ce + 0.7, abs=1e-12)


def test_generator_objective_matches_generator_loss(nets):
    g, d, rng = nets
    batch = GenBatch(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), np.array([0, 1, 2, 0, 1]),
                     rng.normal(size=(5, 4)))
    res = generator_objective(g, d, batch, weights=TrWeights(1.0, 0.0, 0.0))
    fake = generate(g, batch.semantics, batch.noise)
    expect = generator_loss(d, fake, batch.labels, tr_term(fake, batch.centers))
    assert res.value == pytest.approx(expect, abs=1e-12)


def test_unit_linear_critic_has_zero_penalty():
    trunk = Mlp([Layer(np.eye(3), np.zeros(3))])
    d = Discriminator(trunk, Layer(np.array([[0.0, 1.0, 0.0]]), np.zeros(1)),
                      Layer(np.zeros((2, 3)), np.zeros(2)), (0, 1))
    value, grads, _ = gradient_penalty(d, np.random.default_rng(0).normal(size=(8, 3)))
    assert value == 0.0
    assert all(np.all(gr == 0.0) for gr in grads)


def test_pure_wasserstein_objective(nets):
    _, d, rng = nets
    real, fake = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    res = discriminator_objective(d, real, fake, np.zeros(6, int), gp_weight=0.0, cls_weight=0.0)
    assert res.value == pytest.approx(d.forward(fake)[0].mean() - d.forward(real)[0].mean())
    assert res.gp == 0.0


def test_critic_terms_cancel_on_matched_distributions(nets):
    _, d, rng = nets
    n = 10_000
    real, fake = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
    s_real, s_fake = d.forward(real)[0], d.forward(fake)[0]
    res = discriminator_objective(d, real, fake, np.zeros(n, int), gp_weight=0.0, cls_weight=0.0)
    sigma = math.sqrt(s_real.var() / n + s_fake.var() / n)
    assert abs(res.wass) < 3 * sigma


@pytest.mark.parametrize("lr", [1e-4, 1e-5])
def test_critic_step_decreases_loss(nets, lr):
    _, d, rng = nets
    real, fake = rng.normal(1.0, 1.0, (8, 4)), rng.normal(size=(8, 4))
    labels = rng.integers(0, 3, 8)
    before = discriminator_objective(d, real, fake, labels, gp_weight=0.0)
    for p, gr in zip(d.params(), before.grads):
        p -= lr * gr
    after = discriminator_objective(d, real, fake, labels, gp_weight=0.0)
    assert after.value < before.value


# ---------------------------------------------------------------- gradient checks

def test_gradcheck_small_run_passes():
    results = run_gradcheck(n_nets=4, seed=1)
    assert [r.name for r in results] == list(ALL_TERMS)
    assert all(r.passed for r in results), format_report(results)
    assert format_report(results).endswith("overall: PASS")


def test_gradcheck_detects_corruption():
    results = run_gradcheck(n_nets=2, seed=0, terms=("gp", "tr_genus"), corrupt="tr_genus")
    status = {r.name: r.passed for r in results}
    assert status == {"gp": True, "tr_genus": False}


# ---------------------------------------------------------------- training

def _small_problem():
    tax = balanced_taxonomy(2, 2, 2)
    ds = synth_dataset(tax, 6, 4, 3, 0.5, 0)
    return tax, ds.restrict_classes([0, 1, 2, 4, 5, 6])


def test_train_zero_iterations_returns_init():
    tax, seen = _small_problem()
    cfg = TrainConfig(iterations=0, batch_size=8, g_hidden=(6,), d_hidden=(6,), seed=3)
    res = train(seen, tax, cfg)
    assert res.log == [] and res.iteration == 0
    ref = init_generator(seen.semantic_dim, cfg.noise_dim, seen.visual_dim, cfg.g_hidden,
                         np.random.Generator(np.random.PCG64(np.random.SeedSequence(3))))
    for a, b in zip(res.generator.params(), ref.params()):
        assert np.array_equal(a, b)


def test_train_deterministic_and_checkpoint_roundtrip(tmp_path):
    tax, seen = _small_problem()
    cfg = TrainConfig(iterations=15, batch_size=8, g_hidden=(6,), d_hidden=(6,), seed=1)
    a, b = train(seen, tax, cfg), train(seen, tax, cfg)
    assert a.log == b.log
    checkpoint.save(tmp_path / "a.json", a.generator, a.discriminator, 1, a.iteration)
    checkpoint.save(tmp_path / "b.json", b.generator, b.discriminator, 1, b.iteration)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    g, d, obj = checkpoint.load(tmp_path / "a.json")
    assert obj["iteration"] == 15
    for x, y in zip(g.params() + d.params(), a.generator.params() + a.discriminator.params()):
        assert np.array_equal(x, y)
    assert all(np.all(np.isfinite(row)) for row in a.log)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_reports_iteration_on_divergence():
    tax, seen = _small_problem()
    cfg = TrainConfig(iterations=50, batch_size=8, g_hidden=(6,), d_hidden=(6,), lr_g=1e150,
                      lr_d=1e150, seed=0)
    with pytest.raises(NonFinite, match="iteration"):
        train(seen, tax, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_g=0.0)
    with pytest.raises(WeightConstraintViolated):
        TrainConfig(weights=(0.5, 0.5, 0.5))
