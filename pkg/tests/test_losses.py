from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from potloc.checks import _all_coords, _central_difference, _gradient_error, _loss_cases, random_gradient_instance
from potloc.core import PointAnnotation, PseudoLabel, VideoRecord
from potloc.losses import (
    LogitTable,
    LossWeights,
    PointSupervision,
    PseudoLabelSupervision,
    SampledPositives,
    act_focal_loss,
    background_seeds,
    bg_loss,
    enhanced_act_loss,
    enhanced_bg_loss,
    loss_components,
    mil_loss,
    pyramid_lengths,
    sample_pseudo_labels,
    total_loss,
    video_level_scores,
)
from potloc.synth import SynthConfig, gen_dataset
from potloc.trainer import TrainerConfig, fit_logits, pooled_pyramid, with_context

LN2 = math.log(2.0)


def test_video_level_scores_examples():
    P = np.array([[0.1, 0.0], [0.9, 0.0], [0.8, 0.0], [0.2, 0.0]])
    assert video_level_scores(P, 2)[0] == pytest.approx(0.85)
    assert video_level_scores(P, 1)[0] == pytest.approx(0.9)
    lv0 = np.array([[0.6, 0.0], [0.1, 0.0]])
    lv1 = np.array([[0.8, 0.0]])
    assert video_level_scores([lv0, lv1], 1)[0] == pytest.approx(0.7)
    with pytest.raises(ValueError):
        video_level_scores(P, 5)


def test_mil_closed_forms():
    assert mil_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))[0] == pytest.approx(0.0, abs=1e-6)
    assert mil_loss(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(LN2, abs=1e-6)
    assert mil_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))[0] == pytest.approx(2 * LN2, abs=1e-6)


def test_act_focal_closed_forms():
    point = [PointAnnotation.of(0, 0, 1)]
    assert act_focal_loss(np.array([[0.5, 0.3]]), point, 2.0)[0] == pytest.approx(0.25 * LN2, abs=1e-6)
    perfect = np.array([[1.0, 0.0, 0.0]])
    assert act_focal_loss(perfect, [PointAnnotation.of(0, 0, 2)], 2.0)[0] == pytest.approx(0.0, abs=1e-6)
    value, grad = act_focal_loss(np.zeros((3, 2)), [], 2.0)
    assert value == 0.0 and not grad.any()


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.integers(0, 1))
def test_gamma_zero_is_bce(p0, p1, cls):
    P_hat = np.array([[p0, p1, 0.5]])
    value = act_focal_loss(P_hat, [PointAnnotation.of(0, cls, 2)], 0.0)[0]
    y = [1.0 if c == cls else 0.0 for c in range(2)]
    bce = -sum(yc * math.log(q) + (1 - yc) * math.log(1 - q) for yc, q in zip(y, (p0, p1)))
    assert abs(value - bce) <= 1e-12


def test_background_seed_examples():
    P_hat = np.array([[0.0, 0.9], [0.0, 0.2], [0.0, 0.8]])
    assert background_seeds(P_hat, 0.7) == [0, 2]
    assert background_seeds(P_hat, 0.95) == []
    assert background_seeds(P_hat, 0.7, {0}) == [2]


def test_bg_loss_closed_forms():
    assert bg_loss(np.array([[0.0, 1.0]]), [0], 2.0)[0] == pytest.approx(0.0, abs=1e-6)
    assert bg_loss(np.array([[0.0, 0.5]]), [0], 2.0)[0] == pytest.approx(0.25 * LN2, abs=1e-6)
    value, grad = bg_loss(np.ones((2, 2)), [], 2.0)
    assert value == 0.0 and not grad.any()


def _levels(sampled, level):
    return sorted(t for t, _ in sampled.levels[level])


def test_sampling_examples():
    pl = [PseudoLabel(10, 0, 30, 0)]
    assert _levels(sample_pseudo_labels(pl, 2, 0, 2, 64), 0) == [8, 9, 10, 11, 12]
    assert _levels(sample_pseudo_labels([PseudoLabel(1, 0, 30, 0)], 2, 0, 2, 64), 0) == [0, 1, 2, 3]
    assert _levels(sample_pseudo_labels(pl, 2, 2, 2, 64), 2) == [1, 2, 3, 4, 5]


def test_sampling_scaled_mode_and_dedup():
    pl = [PseudoLabel(10, 0, 30, 0)]
    assert _levels(sample_pseudo_labels(pl, 2, 1, 1, 64, mode="scaled"), 1) == [3, 4, 5, 6, 7]
    twin = sample_pseudo_labels([PseudoLabel(10, 0, 30, 0), PseudoLabel(11, 0, 30, 0)], 2, 0, 2, 64)
    assert twin.levels[0] == tuple((t, 0) for t in range(8, 14))
    both = sample_pseudo_labels([PseudoLabel(10, 8, 12, 0), PseudoLabel(10, 8, 12, 1)], 2, 0, 0, 64)
    assert both.levels[0] == ((10, 0), (10, 1))


def test_pyramid_lengths():
    assert pyramid_lengths(2304, 2, 4) == [2304, 1152, 576, 288, 144]
    assert pyramid_lengths(9, 2, 2) == [9, 5, 3]


def test_enhanced_losses_reduce_to_base_losses(rng):
    P_hat = rng.uniform(0.05, 0.95, size=(12, 3))
    points = [PointAnnotation.of(4, 1, 2)]
    sampled = SampledPositives((((4, 1),),))
    assert enhanced_act_loss([P_hat], sampled, 2.0)[0] == pytest.approx(act_focal_loss(P_hat, points, 2.0)[0])
    seeds = background_seeds(P_hat, 0.5, {4})
    assert enhanced_bg_loss([P_hat], sampled, 0.5, 2.0)[0] == pytest.approx(bg_loss(P_hat, seeds, 2.0)[0])
    assert 4 not in seeds


def test_enhanced_act_is_level_order_independent(rng):
    levels = [rng.uniform(0.05, 0.95, size=(n, 3)) for n in (8, 4)]
    sampled = SampledPositives((((1, 0), (2, 1)), ((0, 0),)))
    swapped = SampledPositives((sampled.levels[1], sampled.levels[0]))
    assert enhanced_act_loss(levels, sampled)[0] == pytest.approx(enhanced_act_loss(levels[::-1], swapped)[0])
    perfect = np.zeros((4, 3))
    perfect[1, 0] = 1.0
    assert enhanced_act_loss([perfect], SampledPositives((((1, 0),),)))[0] == pytest.approx(0.0, abs=1e-6)
    assert enhanced_bg_loss([np.zeros((4, 3))], SampledPositives(((),)), 0.5)[0] == 0.0


def test_total_loss_zero_weights_and_linearity(rng):
    logits = [rng.normal(size=(16, 3))]
    sup = PointSupervision((PointAnnotation.of(3, 0, 2),), 2)
    value, grads = total_loss(logits, sup, LossWeights(0, 0, 0))
    assert value == 0.0 and not grads[0].any()
    one, g1 = total_loss(logits, sup, LossWeights(1, 0, 0))
    two, g2 = total_loss(logits, sup, LossWeights(2, 0, 0))
    assert two == pytest.approx(2 * one) and np.allclose(g2[0], 2 * g1[0])
    parts = loss_components(logits, sup)
    assert total_loss(logits, sup)[0] == pytest.approx(sum(parts.values()))


def test_total_loss_rejects_mismatched_pyramid(rng):
    sup = PseudoLabelSupervision((PseudoLabel(2, 0, 5, 0),), 2, 2)
    with pytest.raises(ValueError):
        total_loss([rng.normal(size=(16, 3)), rng.normal(size=(7, 3))], sup)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_losses_non_negative_and_gradients_match(seed):
    rng = np.random.default_rng(seed)
    instance = random_gradient_instance(rng, max_T=12, max_C=3, max_L=2)
    for name, f, x0, analytic in _loss_cases(*instance):
        assert f(x0) >= 0
        coords = _all_coords([x.shape for x in x0])
        numeric = _central_difference(f, x0, coords, 1e-4)
        assert _gradient_error(analytic, numeric, coords, 1e-6) <= 1e-3, name


@pytest.fixture(scope="module")
def video():
    return gen_dataset(SynthConfig(seed=5, num_videos=1))[0]


def test_fit_logits_decreases_loss(video):
    history = []
    sup = PointSupervision(video.points, video.num_classes)
    table = fit_logits(video, sup, LossWeights(), 200, 0.05, history=history)
    final = total_loss(table, sup)[0]
    assert final < history[0]
    assert history[0] == pytest.approx(total_loss(LogitTable.zeros([video.T], 3), sup)[0])


def test_fit_logits_linear_readout_and_pyramid(video):
    pls = tuple(PseudoLabel(p.epsilon, max(0, p.epsilon - 4), min(video.T, p.epsilon + 4), p.class_id)
                for p in video.points)
    sup = PseudoLabelSupervision(pls, video.num_classes, 2)
    history = []
    table = fit_logits(video, sup, LossWeights(), 30, 0.1, levels=3, readout="linear", context=5, history=history)
    assert [len(z) for z in table.levels] == pyramid_lengths(video.T, 2, 3)
    assert history[-1] < history[0]


def test_fit_logits_errors_and_determinism(video):
    sup = PointSupervision(video.points, video.num_classes)
    with pytest.raises(ValueError):
        fit_logits(video, sup, LossWeights(), 0, 0.1)
    a = fit_logits(video, sup, LossWeights(), 10, 0.1, seed=7, readout="linear")
    b = fit_logits(video, sup, LossWeights(), 10, 0.1, seed=7, readout="linear")
    assert all(np.array_equal(x, y) for x, y in zip(a.levels, b.levels))
    with pytest.raises(FloatingPointError):
        fit_logits(video, sup, LossWeights(), 5, float("inf"))
    with pytest.raises(ValueError):
        fit_logits(VideoRecord("x", 4, 3, points=video.points[:0]), sup, LossWeights(), 5, 0.1, readout="linear")


def test_feature_helpers(rng):
    f = rng.normal(size=(9, 2))
    pyr = pooled_pyramid(f, 2, 2)
    assert [len(x) for x in pyr] == [9, 5, 3]
    assert np.allclose(pyr[1][-1], f[8])
    ctx = with_context([f], 3)[0]
    assert ctx.shape == (9, 4)
    assert np.allclose(ctx[4, 2:], f[3:6].mean(axis=0)) and np.allclose(ctx[0, 2:], f[:2].mean(axis=0))


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(steps=0)
    with pytest.raises(ValueError):
        TrainerConfig(momentum=1.0)
    with pytest.raises(ValueError):
        LossWeights(bg_threshold=1.0)
