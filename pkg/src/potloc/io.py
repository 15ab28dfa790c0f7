"""Line-delimited JSON readers and writers for every pipeline artifact.

Every record carries ``video_id``. Reals are written with Python's
shortest round-trip repr, so write-then-read reproduces float64 values
bit for bit.
"""
from __future__ import annotations

import json
import os
import tempfile
from collections import defaultdict
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import (
    Detection,
    GroundTruth,
    PointAnnotation,
    Proposal,
    PseudoLabel,
    VideoRecord,
)


class RecordParseError(ValueError):
    """A malformed line in a ``.jsonl`` file."""

    def __init__(self, path: str | os.PathLike, line: int, field: str | None, message: str):
        self.path = str(path)
        self.line = line
        self.field = field
        where = f"{self.path}:{line}"
        if field is not None:
            where += f" field {field!r}"
        super().__init__(f"{where}: {message}")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_lines(path: str | os.PathLike, records: Iterable[Mapping[str, Any]]) -> None:
    lines = [json.dumps(r, ensure_ascii=False, allow_nan=False) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def _iter_records(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, lineno, None, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise RecordParseError(path, lineno, None, "record is not a JSON object")
            yield lineno, obj


class _Fields:
    """Typed field access that reports the offending line and field."""

    def __init__(self, path, lineno: int, obj: dict):
        self.path, self.lineno, self.obj = path, lineno, obj

    def _raw(self, name: str, optional: bool = False):
        if name not in self.obj:
            if optional:
                return None
            raise RecordParseError(self.path, self.lineno, name, "missing field")
        return self.obj[name]

    def _convert(self, name: str, fn: Callable, optional: bool = False):
        value = self._raw(name, optional)
        if value is None:
            if optional:
                return None
            raise RecordParseError(self.path, self.lineno, name, "null value")
        try:
            return fn(value)
        except (TypeError, ValueError) as exc:
            raise RecordParseError(self.path, self.lineno, name, str(exc)) from None

    def str(self, name: str) -> str:
        return self._convert(name, _as_str)

    def int(self, name: str) -> int:
        return self._convert(name, _as_int)

    def float(self, name: str) -> float:
        return self._convert(name, _as_float)

    def any(self, name: str, fn: Callable, optional: bool = False):
        return self._convert(name, fn, optional)


def _as_str(v) -> str:
    if not isinstance(v, str):
        raise TypeError(f"expected string, got {type(v).__name__}")
    return v


def _as_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError(f"expected integer, got {v!r}")
    return v


def _as_float(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected number, got {v!r}")
    return float(v)


def _as_label(v) -> tuple[int, ...]:
    if not isinstance(v, list):
        raise TypeError("expected a list of 0/1 integers")
    return tuple(_as_int(x) for x in v)


def _as_matrix(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got {arr.ndim} dimensions")
    return arr


def _as_ground_truth(v) -> tuple[GroundTruth, ...]:
    if not isinstance(v, list):
        raise TypeError("expected a list of intervals")
    out = []
    for item in v:
        if not isinstance(item, dict):
            raise TypeError("ground-truth entries must be objects")
        out.append(GroundTruth(_as_float(item["start"]), _as_float(item["end"]), _as_int(item["label"])))
    return tuple(out)


def _group(pairs: Iterable[tuple[str, Any]]) -> dict[str, list]:
    grouped: dict[str, list] = defaultdict(list)
    for key, value in pairs:
        grouped[key].append(value)
    return dict(grouped)


# videos.jsonl

def write_videos(path, videos: Sequence[VideoRecord]) -> None:
    """Points are not stored here; they live in ``points.jsonl``."""
    def rec(v: VideoRecord):
        return {
            "video_id": v.id,
            "T": v.T,
            "num_classes": v.num_classes,
            "features": None if v.features is None else np.asarray(v.features, dtype=np.float64).tolist(),
            "ground_truth": None if v.ground_truth is None else [
                {"start": float(g.start), "end": float(g.end), "label": g.label} for g in v.ground_truth
            ],
        }
    _dump_lines(path, (rec(v) for v in videos))


def read_videos(path, points: Mapping[str, Sequence[PointAnnotation]] | None = None) -> list[VideoRecord]:
    out = []
    for lineno, obj in _iter_records(path):
        f = _Fields(path, lineno, obj)
        vid = f.str("video_id")
        out.append(VideoRecord(
            id=vid,
            T=f.int("T"),
            num_classes=f.int("num_classes"),
            features=f.any("features", _as_matrix, optional=True),
            points=tuple(points.get(vid, ())) if points else (),
            ground_truth=f.any("ground_truth", _as_ground_truth, optional=True),
        ))
    return out


# points.jsonl

def write_points(path, points: Mapping[str, Sequence[PointAnnotation]]) -> None:
    _dump_lines(path, (
        {"video_id": vid, "epsilon": p.epsilon, "label": list(p.label)}
        for vid, pts in points.items() for p in pts
    ))


def read_points(path) -> dict[str, list[PointAnnotation]]:
    def parse():
        for lineno, obj in _iter_records(path):
            f = _Fields(path, lineno, obj)
            yield f.str("video_id"), PointAnnotation(f.int("epsilon"), f.any("label", _as_label))
    return _group(parse())


# proposals.jsonl

def write_proposals(path, proposals: Mapping[str, Sequence[Proposal]]) -> None:
    _dump_lines(path, (
        {"video_id": vid, "start": float(p.start), "end": float(p.end),
         "label": p.label, "confidence": float(p.confidence)}
        for vid, props in proposals.items() for p in props
    ))


def read_proposals(path) -> dict[str, list[Proposal]]:
    def parse():
        for lineno, obj in _iter_records(path):
            f = _Fields(path, lineno, obj)
            yield f.str("video_id"), Proposal(
                f.float("start"), f.float("end"), f.int("label"), f.float("confidence"))
    return _group(parse())


# pseudolabels.jsonl

def write_pseudo_labels(path, labels: Mapping[str, Sequence[PseudoLabel]]) -> None:
    _dump_lines(path, (
        {"video_id": vid, "point": p.point, "start": float(p.start), "end": float(p.end), "label": p.label}
        for vid, items in labels.items() for p in items
    ))


def read_pseudo_labels(path) -> dict[str, list[PseudoLabel]]:
    def parse():
        for lineno, obj in _iter_records(path):
            f = _Fields(path, lineno, obj)
            yield f.str("video_id"), PseudoLabel(
                f.int("point"), f.float("start"), f.float("end"), f.int("label"))
    return _group(parse())


# detections.jsonl

def write_detections(path, detections: Sequence[Detection]) -> None:
    _dump_lines(path, (
        {"video_id": d.video_id, "start": float(d.start), "end": float(d.end),
         "label": d.label, "score": float(d.score)}
        for d in detections
    ))


def read_detections(path) -> list[Detection]:
    out = []
    for lineno, obj in _iter_records(path):
        f = _Fields(path, lineno, obj)
        out.append(Detection(f.str("video_id"), f.float("start"), f.float("end"),
                             f.int("label"), f.float("score")))
    return out


# scores.jsonl: one line per (video, level), values row-major

def write_scores(path, scores: Mapping[str, Sequence[np.ndarray]]) -> None:
    def recs():
        for vid, levels in scores.items():
            for level, arr in enumerate(levels):
                arr = np.asarray(arr, dtype=np.float64)
                yield {"video_id": vid, "level": level, "T": int(arr.shape[0]),
                       "channels": int(arr.shape[1]), "values": arr.ravel().tolist()}
    _dump_lines(path, recs())


def read_scores(path) -> dict[str, list[np.ndarray]]:
    levels: dict[str, dict[int, np.ndarray]] = defaultdict(dict)
    for lineno, obj in _iter_records(path):
        f = _Fields(path, lineno, obj)
        vid, level = f.str("video_id"), f.int("level")
        T, channels = f.int("T"), f.int("channels")
        values = f.any("values", lambda v: np.asarray(v, dtype=np.float64))
        if values.size != T * channels:
            raise RecordParseError(path, lineno, "values", f"expected {T * channels} values, got {values.size}")
        levels[vid][level] = values.reshape(T, channels)
    out = {}
    for vid, by_level in levels.items():
        if sorted(by_level) != list(range(len(by_level))):
            raise RecordParseError(path, 0, "level", f"video {vid!r} has non-contiguous levels {sorted(by_level)}")
        out[vid] = [by_level[i] for i in range(len(by_level))]
    return out


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def load_dataset(directory) -> list[VideoRecord]:
    """Join ``videos.jsonl`` with ``points.jsonl`` from one directory."""
    directory = Path(directory)
    points = read_points(directory / "points.jsonl") if (directory / "points.jsonl").exists() else {}
    return read_videos(directory / "videos.jsonl", points)
