"""Tests for aggregation, loss, analytic gradients, Adam and the training loop."""

import math

import numpy as np
import pytest

from glat.analyzers.graph import build_bundle
from glat.analyzers.irm import IterativeRefiner
from glat.exceptions import DivergenceError, NonFiniteGradientError
from glat.generators.synth_generator import synth_generate
from glat.models import EmbeddingTable, GradeLabel, ModelParams, SynthSpec, TrainConfig, WSIBag
from glat.providers.feature_provider import make_frozen_projections
from glat.training import trainer
from glat.training.head import (
    aggregate_wsi,
    classify,
    convex_weights,
    cross_entropy,
    forward_slide,
    init_model_params,
    smoothness_penalty,
)
from glat.training.loss import backward_gradients, finite_diff_check, total_loss
from glat.training.optimizer import AdamState, adam_step, adam_update
from glat.training.trainer import EarlyStopping, bundles_for, train_loop
from glat.utils.prng import SplitMix64
from tests import oracles


def _bag(m: int, d: int, label: int, seed: int) -> WSIBag:
    rng = SplitMix64(seed)
    table = EmbeddingTable.from_arrays(range(m), [(i, 0) for i in range(m)], rng.normal((m, d)), slide_id=f"b{seed}")
    return WSIBag(slide_id=table.slide_id, label=GradeLabel(class_index=label), patches=table)


def _random_params(d: int, seed: int, m_max: int = 8, d_k: int = 4, d_v: int = 4, **kwargs) -> ModelParams:
    params = init_model_params(d, d_k=d_k, d_v=d_v, m_max=m_max, seed=seed, **kwargs)
    rng = SplitMix64(seed + 500)
    return params.with_arrays(
        {
            "glat.filter": np.array([1.0, 0.1, -0.05]),
            "agg_logits": rng.normal(m_max, scale=0.5),
            "cls_w": rng.normal((4, d_v), scale=0.5),
            "cls_b": rng.normal(4, scale=0.5),
        }
    )


def _synthetic_bags(n_slides: int, seed: int = 0):
    spec = SynthSpec(
        grid_w=6, grid_h=6, d=6, n_slides=n_slides, lesion_radius_range=(1, 2), noise_scale=0.3, seed=seed
    )
    refiner = IterativeRefiner(make_frozen_projections(7, 6, 4, 4), m=8, t_total=2)
    return [
        WSIBag(slide_id=s.table.slide_id, label=s.label, patches=refiner.select(s.table))
        for s in synth_generate(spec)
    ]


# --- Aggregation and classifier ---------------------------------------------


def test_convex_weights_uniform():
    np.testing.assert_allclose(convex_weights(np.zeros(3)), [1 / 3] * 3, atol=1e-15)


def test_convex_weights_ln2():
    np.testing.assert_allclose(convex_weights(np.array([math.log(2.0), 0.0])), [2 / 3, 1 / 3], atol=1e-15)


def test_convex_weights_shift_invariant():
    theta = SplitMix64(1).normal(5)
    np.testing.assert_allclose(convex_weights(theta), convex_weights(theta + 7.5), atol=1e-15)


def test_aggregate_single_row_and_uniform():
    h = SplitMix64(2).normal((4, 3))
    np.testing.assert_array_equal(aggregate_wsi(h[:1], np.array([1.0])), h[0])
    np.testing.assert_allclose(aggregate_wsi(h, np.full(4, 0.25)), h.mean(axis=0), atol=1e-15)


def test_aggregate_stays_in_hull():
    rng = SplitMix64(3)
    h = rng.normal((5, 4))
    w = convex_weights(rng.normal(5))
    out = aggregate_wsi(h, w)

    assert np.all(out >= h.min(axis=0) - 1e-15)
    assert np.all(out <= h.max(axis=0) + 1e-15)
    expected = [sum(w[i] * h[i, c] for i in range(5)) for c in range(4)]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_classify_zero_weights():
    np.testing.assert_allclose(classify(np.ones(3), np.zeros((4, 3)), np.zeros(4)), [0.25] * 4, atol=1e-15)


def test_classify_dominant_bias():
    probs = classify(np.ones(3), np.zeros((4, 3)), np.array([10.0, 0.0, 0.0, 0.0]))
    assert probs[0] > 0.9999


def test_classify_matches_oracle():
    rng = SplitMix64(4)
    h, w, b = rng.normal(3), rng.normal((4, 3)), rng.normal(4)
    expected = oracles.softmax([sum(w[c, j] * h[j] for j in range(3)) + b[c] for c in range(4)])
    np.testing.assert_allclose(classify(h, w, b), expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("scale", [1e-6, 1e6])
def test_outputs_normalized_under_extreme_magnitudes(scale):
    params = _random_params(4, 2)
    e = SplitMix64(9).normal((5, 4)) * scale
    fwd = forward_slide(e, build_bundle(e), params)
    assert fwd.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert fwd.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_smoothness_equal_rows():
    w = build_bundle(SplitMix64(1).normal((3, 2))).w
    assert smoothness_penalty(np.ones((3, 2)), w) == 0.0


def test_smoothness_two_nodes():
    h = np.array([[0.0], [1.0]])
    w = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert smoothness_penalty(h, w) == pytest.approx(1.0, abs=1e-15)


def test_smoothness_matches_oracle():
    rng = SplitMix64(5)
    h = rng.normal((4, 3))
    w = build_bundle(rng.normal((4, 2))).w
    assert smoothness_penalty(h, w) == pytest.approx(oracles.smoothness(h.tolist(), w.tolist()), abs=1e-10)


def test_prefix_slice_for_short_slides():
    params = _random_params(4, 1, m_max=6)
    e = SplitMix64(2).normal((3, 4))
    fwd = forward_slide(e, build_bundle(e), params)
    np.testing.assert_allclose(fwd.weights, convex_weights(params.agg_logits[:3]), atol=1e-15)


def test_init_is_plain_attention_with_uniform_pooling():
    params = init_model_params(5, d_k=4, d_v=4, m_max=4, seed=3)
    np.testing.assert_array_equal(params.glat.filter.coeffs, [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(params.agg_logits, np.zeros(4))
    np.testing.assert_array_equal(params.cls_w, np.zeros((4, 4)))
    fwd = forward_slide(SplitMix64(1).normal((4, 5)), build_bundle(SplitMix64(1).normal((4, 5))), params)
    np.testing.assert_allclose(fwd.probs, 0.25, atol=1e-15)


# --- Loss -------------------------------------------------------------------


@pytest.fixture
def batch():
    """Two labeled bags of different sizes."""
    return [_bag(4, 6, 1, 11), _bag(3, 6, 2, 12)]


def test_zero_alpha_is_mean_cross_entropy(batch):
    params = _random_params(6, 3)
    bundles = bundles_for(batch)
    loss = total_loss(batch, params, 0.0, bundles)
    ce = [cross_entropy(forward_slide(b.patches.embeddings(), g, params).logits, b.label.class_index)
          for b, g in zip(batch, bundles)]
    assert loss.total == sum(ce) / 2


def test_loss_decomposition(batch):
    params = _random_params(6, 4)
    bundles = bundles_for(batch)
    with_penalty = total_loss(batch, params, 0.01, bundles)
    without = total_loss(batch, params, 0.0, bundles)
    assert with_penalty.total - without.total == pytest.approx(0.01 * with_penalty.smoothness, abs=1e-12)


def test_loss_equals_per_sample_mean(batch):
    params = _random_params(6, 5)
    bundles = bundles_for(batch)
    loss = total_loss(batch, params, 0.01, bundles)
    single = [total_loss([b], params, 0.01, [g]).total for b, g in zip(batch, bundles)]
    assert loss.total == pytest.approx(sum(single) / 2, abs=1e-12)


def test_confident_prediction_has_vanishing_gradients():
    table = EmbeddingTable.from_arrays(range(3), [(i, 0) for i in range(3)], np.tile([1.0, 2.0, -1.0], (3, 1)))
    bag = WSIBag(slide_id="flat", label=GradeLabel(class_index=0), patches=table)
    params = init_model_params(3, d_k=2, d_v=2, m_max=3).with_arrays({"cls_b": np.array([60.0, 0.0, 0.0, 0.0])})

    loss, grads = backward_gradients([bag], params, 0.0, bundles_for([bag]))
    assert loss.cross_entropy < 1e-8
    for grad in grads.values():
        assert np.max(np.abs(grad)) < 1e-8


# --- Gradient checks --------------------------------------------------------


@pytest.mark.parametrize("m", [2, 4, 8])
@pytest.mark.parametrize("d", [4, 8])
@pytest.mark.parametrize("alpha", [0.0, 0.01])
def test_gradients_match_finite_differences(m, d, alpha):
    batch = [_bag(m, d, 1, 100 + m + d), _bag(max(1, m - 1), d, 3, 200 + m + d)]
    params = _random_params(d, m + d)
    report = finite_diff_check(batch, params, alpha, bundles_for(batch), step=1e-5)
    assert report.worst < 1e-4, report.max_rel_error


@pytest.mark.parametrize(
    "options",
    [
        {"attention": "msa"},
        {"aggregation": "mean"},
        {"heads": 2},
        {"graph_bias": "negative-laplacian"},
        {"graph_bias": "adjacency"},
    ],
)
def test_gradients_match_finite_differences_for_variants(options):
    batch = [_bag(4, 4, 2, 31), _bag(3, 4, 0, 32)]
    params = _random_params(4, 7, **options)
    report = finite_diff_check(batch, params, 0.01, bundles_for(batch), step=1e-5)
    assert report.worst < 1e-4, report.max_rel_error


def test_finite_diff_exact_on_linear_loss():
    params = init_model_params(3, d_k=2, d_v=2, m_max=2)
    params = params.with_arrays({name: np.zeros_like(arr) for name, arr in params.arrays().items()})
    rng = SplitMix64(6)
    coeffs = {name: rng.integers(-3, 3, arr.shape) * 0.25 for name, arr in params.arrays().items()}

    def loss_fn(p):
        return float(sum(np.sum(coeffs[name] * arr) for name, arr in p.arrays().items()))

    report = finite_diff_check([], params, 0.0, [], step=2.0**-8, loss_fn=loss_fn, grad_fn=lambda p: coeffs)
    assert report.worst < 1e-10


def test_large_step_degrades_report(batch):
    params = _random_params(6, 8)
    bundles = bundles_for(batch)
    fine = finite_diff_check(batch, params, 0.01, bundles, step=1e-5)
    coarse = finite_diff_check(batch, params, 0.01, bundles, step=1e-1)
    assert coarse.worst > fine.worst


# --- Optimizer --------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    params = _random_params(4, 1)
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    config = TrainConfig(weight_decay=0.0)
    new_params, state = adam_step(params, grads, AdamState(), config)

    for name, arr in params.arrays().items():
        np.testing.assert_array_equal(new_params.arrays()[name], arr)
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    config = TrainConfig(lr=1e-3, weight_decay=0.0)
    value, _, _ = adam_update(np.array([0.0]), np.array([1.0]), np.zeros(1), np.zeros(1), 1, config)
    assert value[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_quadratic_trace_matches_oracle():
    config = TrainConfig(lr=0.05, weight_decay=1e-5)
    x, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
    trace = []
    for step in range(1, 11):
        x, m, v = adam_update(x, 2.0 * x, m, v, step, config)
        trace.append(float(x[0]))

    expected = oracles.adam_trace(lambda z: 2.0 * z, 1.0, 10, lr=0.05, wd=1e-5)
    np.testing.assert_allclose(trace, expected, rtol=0, atol=1e-15)
    losses = [t * t for t in trace]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_rejects_non_finite():
    params = _random_params(4, 1)
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    grads["cls_b"] = np.array([np.nan, 0.0, 0.0, 0.0])
    with pytest.raises(NonFiniteGradientError, match="cls_b"):
        adam_step(params, grads, AdamState(), TrainConfig())


# --- Training loop ----------------------------------------------------------


def test_early_stopping_requires_patience():
    with pytest.raises(ValueError):
        EarlyStopping(patience=0)


def test_early_stopping_counts_stale_epochs():
    stopper = EarlyStopping(patience=2)
    assert stopper(1.0) is True
    assert stopper(0.5) is True
    assert stopper(0.6) is False
    assert not stopper.early_stop
    assert stopper(0.7) is False
    assert stopper.early_stop


@pytest.fixture(scope="module")
def synthetic_split():
    """Small synthetic train/validation split."""
    bags = _synthetic_bags(24, seed=3)
    return bags[:16], bags[16:]


def test_training_is_deterministic(synthetic_split):
    train, val = synthetic_split
    config = TrainConfig(lr=1e-2, batch_size=4, max_epochs=3, patience=3, seed=5)
    params = init_model_params(6, d_k=4, d_v=4, m_max=8, seed=5)

    first = train_loop(train, val, params, config)
    second = train_loop(train, val, params, config)
    assert first.history == second.history
    for name, arr in first.params.arrays().items():
        np.testing.assert_array_equal(second.params.arrays()[name], arr)


def test_training_reduces_loss_and_returns_best_epoch(synthetic_split):
    train, val = synthetic_split
    config = TrainConfig(lr=1e-2, batch_size=4, max_epochs=8, patience=2, seed=1)
    params = init_model_params(6, d_k=4, d_v=4, m_max=8, seed=1)
    result = train_loop(train, val, params, config)

    val_losses = [r.val_loss for r in result.history]
    assert result.best_epoch == 1 + int(np.argmin(val_losses))
    before = total_loss(train, params, config.alpha, bundles_for(train)).total
    after = total_loss(train, result.params, config.alpha, bundles_for(train)).total
    assert after < before


def test_frozen_projections_untouched_by_training(synthetic_split):
    train, val = synthetic_split
    proj = make_frozen_projections(7, 6, 4, 4)
    snapshot = {name: getattr(proj, name).copy() for name in ("w_q", "w_k", "w_v")}
    train_loop(train, val, init_model_params(6, d_k=4, d_v=4, m_max=8), TrainConfig(lr=1e-2, max_epochs=2))

    for name, arr in snapshot.items():
        np.testing.assert_array_equal(getattr(proj, name), arr)


def test_fd_check_runs_before_training(synthetic_split):
    train, val = synthetic_split
    config = TrainConfig(lr=1e-2, batch_size=8, max_epochs=1, fd_check=True)
    result = train_loop(train, val, init_model_params(6, d_k=4, d_v=4, m_max=8), config)
    assert len(result.history) == 1


def test_divergence_aborts_with_epoch(synthetic_split, monkeypatch):
    train, val = synthetic_split
    real = trainer.backward_gradients

    def diverging(*args):
        loss, grads = real(*args)
        return loss._replace(total=float("nan")), grads

    monkeypatch.setattr(trainer, "backward_gradients", diverging)
    with pytest.raises(DivergenceError) as exc:
        train_loop(train, val, init_model_params(6, d_k=4, d_v=4, m_max=8), TrainConfig(max_epochs=2))
    assert exc.value.epoch == 1


def test_empty_split_rejected(synthetic_split):
    train, _ = synthetic_split
    with pytest.raises(ValueError):
        train_loop(train, [], init_model_params(6, d_k=4, d_v=4, m_max=8), TrainConfig())
