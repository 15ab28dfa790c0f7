from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from potloc.core import (
    ClassDurationStats,
    GroundTruth,
    PointAnnotation,
    VideoRecord,
    derive_video_labels,
    is_one_hot,
    seconds_to_snippets,
    validate_dataset,
)


def _video(points=(), T=20, C=3, **kw):
    return VideoRecord("v", T, C, points=tuple(points), **kw)


def test_point_out_of_range_is_reported():
    problems = validate_dataset([_video([PointAnnotation.of(20, 0, 3)])])
    assert len(problems) == 1 and "point out of range" in problems[0]


def test_well_formed_synthetic_set_is_clean(small_dataset):
    assert validate_dataset(small_dataset[:2]) == []


def test_all_zero_label_is_not_one_hot():
    problems = validate_dataset([_video([PointAnnotation(3, (0, 0, 0))])])
    assert len(problems) == 1 and "label not one-hot" in problems[0]


def test_other_violations():
    bad = VideoRecord("v", 10, 2, features=np.zeros((9, 4)), ground_truth=(GroundTruth(5, 3, 0),))
    problems = validate_dataset([bad, VideoRecord("v", 5, 2)])
    assert any("features shape" in p for p in problems)
    assert any("not before end" in p for p in problems)
    assert any("duplicate video id" in p for p in problems)


def test_derive_video_labels_examples():
    pts = [PointAnnotation.of(1, 0, 3), PointAnnotation.of(2, 0, 3), PointAnnotation.of(3, 1, 3)]
    assert derive_video_labels(_video(pts)).tolist() == [1, 1, 0]
    assert derive_video_labels(_video()).tolist() == [0, 0, 0]
    assert derive_video_labels(_video([PointAnnotation.of(0, 2, 3)])).tolist() == [0, 0, 1]


@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 3)), max_size=12), st.randoms())
def test_derive_video_labels_order_independent_and_idempotent(items, rnd):
    pts = [PointAnnotation.of(e, c, 4) for e, c in items]
    first = derive_video_labels(_video(pts, C=4))
    rnd.shuffle(pts)
    assert np.array_equal(first, derive_video_labels(_video(pts, C=4)))
    # labels derived from the presence vector reproduce it
    again = [PointAnnotation.of(0, c, 4) for c in np.flatnonzero(first)]
    assert np.array_equal(first, derive_video_labels(_video(again, C=4)))


def test_point_annotation_helpers():
    p = PointAnnotation.of(7, 2, 4)
    assert p.label == (0, 0, 1, 0) and p.class_id == 2 and p.num_classes == 4
    with pytest.raises(ValueError):
        PointAnnotation.of(0, 4, 4)
    with pytest.raises(ValueError):
        PointAnnotation(0, (1, 1)).class_id
    assert not is_one_hot(()) and not is_one_hot((1, 2)) and is_one_hot((0, 1))


def test_video_record_equality_compares_features():
    a = VideoRecord("v", 3, 1, features=np.ones((3, 2)))
    assert a == VideoRecord("v", 3, 1, features=np.ones((3, 2)))
    assert a != VideoRecord("v", 3, 1, features=np.zeros((3, 2)))
    assert a != VideoRecord("v", 3, 1)
    assert a.without_ground_truth().ground_truth is None


def test_duration_stats_fallbacks():
    stats = ClassDurationStats({0: 10.0, 1: 20.0}, {0: 1, 1: 3})
    assert stats.get(0) == 10.0 and stats.get(2) is None
    assert stats.global_mean == pytest.approx(17.5)
    assert ClassDurationStats().global_mean is None


def test_seconds_to_snippets():
    assert seconds_to_snippets(2.0, 25.0, 16) == pytest.approx(3.125)
    with pytest.raises(ValueError):
        seconds_to_snippets(1.0, 0.0, 16)
