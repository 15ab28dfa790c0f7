from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from potloc.checks import random_refinement_instance
from potloc.core import PointAnnotation, Proposal, PseudoLabel
from potloc.pseudolabel import (
    RefinementConfig,
    class_mean_durations,
    generate_pseudo_labels,
    point_in_proposal,
    seed_singleton_proposals,
)
from potloc.synth import oracle_pseudolabels

A, B = 0, 1


def pt(eps, c=A, C=2):
    return PointAnnotation.of(eps, c, C)


def run(proposals, points, **kw):
    return generate_pseudo_labels({"v": proposals}, {"v": points}, **kw)["v"]


def test_point_in_proposal_examples():
    prop = Proposal(5, 20, A, 1.0)
    assert point_in_proposal(prop, pt(10))
    assert not point_in_proposal(prop, pt(10, B))
    assert point_in_proposal(prop, pt(5))
    assert point_in_proposal(prop, pt(20))


def test_singleton_seeds():
    points = [pt(10), pt(50)]
    seeds = seed_singleton_proposals([Proposal(5, 20, A, 0.9), Proposal(0, 60, A, 0.8), Proposal(70, 80, A, 0.5)],
                                     points)
    assert seeds == [(PseudoLabel(10, 5, 20, A), 0.9)]


def test_class_mean_durations():
    stats = class_mean_durations([(PseudoLabel(10, 5, 20, A), 1.0), (PseudoLabel(40, 35, 45, A), 1.0)])
    assert stats.mean_duration[A] == 12.5 and stats.count[A] == 2
    assert stats.get(B) is None and stats.count.get(B, 0) == 0
    assert class_mean_durations([(PseudoLabel(1, 0, 8, A), 0.2)]).mean_duration[A] == 8


def test_trace_two_points_with_seeds():
    out = run([Proposal(5, 20, A, 0.9), Proposal(0, 60, A, 0.8), Proposal(45, 55, A, 0.3)], [pt(10), pt(50)])
    assert out == [PseudoLabel(10, 5, 20, A), PseudoLabel(50, 45, 55, A)]


def test_trace_truncation_by_half_mean_duration():
    out = run([Proposal(5, 15, A, 0.7), Proposal(0, 60, A, 0.9)], [pt(10), pt(50)])
    assert out == [PseudoLabel(10, 5, 15, A), PseudoLabel(50, 45, 55, A)]


def test_trace_keeps_highest_scoring_seed():
    assert run([Proposal(5, 15, A, 0.7), Proposal(8, 12, A, 0.9)], [pt(10)]) == [PseudoLabel(10, 8, 12, A)]


def test_equal_confidence_prefers_smaller_start_then_end():
    assert run([Proposal(6, 15, A, 0.5), Proposal(5, 15, A, 0.5)], [pt(10)]) == [PseudoLabel(10, 5, 15, A)]
    assert run([Proposal(5, 15, A, 0.5), Proposal(5, 12, A, 0.5)], [pt(10)]) == [PseudoLabel(10, 5, 12, A)]


def test_fallback_without_any_covering_proposal():
    # no statistics at all: default duration 8 -> half-width 4, clipped at 0 and at T
    assert run([], [pt(2)], lengths={"v": 30}) == [PseudoLabel(2, 0.0, 6.0, A)]
    assert run([], [pt(28)], lengths={"v": 30}) == [PseudoLabel(28, 24.0, 30.0, A)]
    # class B has no seed, so the global mean (10) applies
    out = run([Proposal(5, 15, A, 0.7)], [pt(10), pt(40, B)], lengths={"v": 100})
    assert out[1] == PseudoLabel(40, 35.0, 45.0, B)


def test_invalid_default_duration():
    with pytest.raises(ValueError):
        RefinementConfig(0.0)


def test_statistics_are_pooled_across_videos():
    out = generate_pseudo_labels(
        {"a": [Proposal(0, 20, A, 0.9)], "b": [Proposal(0, 100, A, 0.9), Proposal(0, 100, A, 0.1)]},
        {"a": [pt(10)], "b": [pt(50), pt(52)]})
    # the only seed has length 20, so both points in b truncate to +-10
    assert out["b"] == [PseudoLabel(50, 40, 60, A), PseudoLabel(52, 42, 62, A)]


def _tuples(props, pts):
    return ({v: [(p.start, p.end, p.label, p.confidence) for p in ps] for v, ps in props.items()},
            {v: [(p.epsilon, p.class_id) for p in ps] for v, ps in pts.items()})


@given(st.integers(0, 2**32 - 1))
def test_matches_oracle_and_postconditions(seed):
    props, pts, lengths, default = random_refinement_instance(np.random.default_rng(seed))
    got = generate_pseudo_labels(props, pts, RefinementConfig(default), lengths)
    want = oracle_pseudolabels(*_tuples(props, pts), default, lengths)
    for vid, labels in got.items():
        assert [(p.point, p.start, p.end, p.label) for p in labels] == want[vid]
        assert len(labels) == len(pts[vid])
        for pl, p in zip(labels, pts[vid]):
            assert pl.start <= p.epsilon <= pl.end and pl.start < pl.end and pl.label == p.class_id


@given(st.integers(0, 2**32 - 1), st.randoms())
def test_invariant_to_proposal_order_with_distinct_confidences(seed, rnd):
    props, pts, lengths, default = random_refinement_instance(np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    props = {v: [Proposal(p.start, p.end, p.label, float(rng.random())) for p in ps] for v, ps in props.items()}
    shuffled = {v: rnd.sample(ps, len(ps)) for v, ps in props.items()}
    config = RefinementConfig(default)
    assert generate_pseudo_labels(props, pts, config, lengths) == generate_pseudo_labels(shuffled, pts, config, lengths)


@given(st.integers(0, 2**32 - 1))
def test_intervals_come_from_proposals_or_bounded_fallback(seed):
    props, pts, lengths, default = random_refinement_instance(np.random.default_rng(seed))
    got = generate_pseudo_labels(props, pts, RefinementConfig(default), lengths)
    stats = class_mean_durations([s for v in pts for s in seed_singleton_proposals(props[v], pts[v])])
    for vid, labels in got.items():
        for pl, p in zip(labels, pts[vid]):
            covering = [q for q in props[vid] if point_in_proposal(q, p)]
            if covering:
                # equal to or a truncation of a covering proposal
                assert any(q.start <= pl.start and pl.end <= q.end for q in covering)
            else:
                bound = stats.get(p.class_id) or stats.global_mean or default
                assert pl.end - pl.start <= bound + 1e-12
