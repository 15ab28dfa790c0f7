from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from potloc import io
from potloc.core import Detection, PointAnnotation, Proposal, PseudoLabel
from potloc.synth import SynthConfig, gen_dataset

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_proposal_round_trip_is_identity(tmp_path, rng):
    props = {f"v{i % 3}": [] for i in range(3)}
    for i in range(100):
        s = float(rng.uniform(0, 100))
        props[f"v{i % 3}"].append(Proposal(s, s + float(rng.uniform(1e-9, 50)), int(rng.integers(5)),
                                           float(rng.random())))
    io.write_proposals(tmp_path / "p.jsonl", props)
    assert io.read_proposals(tmp_path / "p.jsonl") == props


def test_missing_field_reports_line_and_field(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"video_id": "a", "start": 0, "end": 2, "label": 0, "confidence": 1}\n'
                    '{"video_id": "a", "start": 0, "label": 0, "confidence": 1}\n')
    with pytest.raises(io.RecordParseError) as err:
        io.read_proposals(path)
    assert err.value.line == 2 and err.value.field == "end"


def test_bad_json_and_wrong_type(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(io.RecordParseError) as err:
        io.read_detections(path)
    assert err.value.line == 1
    path.write_text('{"video_id": "a", "start": "x", "end": 2, "label": 0, "score": 1}\n')
    with pytest.raises(io.RecordParseError) as err:
        io.read_detections(path)
    assert err.value.field == "start"


def test_empty_file_gives_empty_collections(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    assert io.read_proposals(path) == {}
    assert io.read_detections(path) == []
    assert io.read_points(path) == {}


@given(st.lists(st.tuples(finite, finite, st.integers(0, 9), finite), max_size=20))
def test_detection_round_trip_any_float(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("d") / "d.jsonl"
    dets = [Detection("vid", a, b, c, s) for a, b, c, s in rows]
    io.write_detections(path, dets)
    assert io.read_detections(path) == dets


def test_dataset_round_trip(tmp_path):
    videos = gen_dataset(SynthConfig(seed=9, num_videos=3))
    io.write_videos(tmp_path / "videos.jsonl", videos)
    io.write_points(tmp_path / "points.jsonl", {v.id: list(v.points) for v in videos})
    assert io.load_dataset(tmp_path) == videos


def test_pseudo_labels_and_points_round_trip(tmp_path):
    labels = {"a": [PseudoLabel(3, 1.5, 4.25, 0), PseudoLabel(9, 8.0, 12.0, 2)], "b": [PseudoLabel(0, 0.0, 1.0, 1)]}
    io.write_pseudo_labels(tmp_path / "pl.jsonl", labels)
    assert io.read_pseudo_labels(tmp_path / "pl.jsonl") == labels
    pts = {"a": [PointAnnotation.of(2, 1, 3)]}
    io.write_points(tmp_path / "pt.jsonl", pts)
    assert io.read_points(tmp_path / "pt.jsonl") == pts


def test_scores_round_trip_bit_exact(tmp_path, rng):
    scores = {"a": [rng.random((7, 3)), rng.random((4, 3))], "b": [rng.random((1, 3))]}
    io.write_scores(tmp_path / "s.jsonl", scores)
    back = io.read_scores(tmp_path / "s.jsonl")
    assert back.keys() == scores.keys()
    for vid in scores:
        assert all(np.array_equal(x, y) for x, y in zip(scores[vid], back[vid]))


def test_scores_value_count_checked(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text('{"video_id": "a", "level": 0, "T": 2, "channels": 2, "values": [0.1, 0.2, 0.3]}\n')
    with pytest.raises(io.RecordParseError, match="expected 4 values"):
        io.read_scores(path)


def test_writes_are_byte_deterministic(tmp_path):
    props = {"a": [Proposal(0.1, 0.30000000000000004, 0, 1 / 3)]}
    io.write_proposals(tmp_path / "1.jsonl", props)
    io.write_proposals(tmp_path / "2.jsonl", props)
    assert (tmp_path / "1.jsonl").read_bytes() == (tmp_path / "2.jsonl").read_bytes()
