"""Domain types shared by every stage of the pipeline.

All times are snippet indices on the feature grid. Intervals are half-open
``[start, end)`` for length arithmetic; the containment test used by
pseudo-label refinement is inclusive at both ends (see
:func:`potloc.pseudolabel.point_in_proposal`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class PointAnnotation:
    """A single annotated snippet ``epsilon`` with a one-hot class vector."""

    epsilon: int
    label: tuple[int, ...]

    @classmethod
    def of(cls, epsilon: int, class_id: int, num_classes: int) -> "PointAnnotation":
        if not 0 <= class_id < num_classes:
            raise ValueError(f"class_id {class_id} outside [0, {num_classes})")
        onehot = [0] * num_classes
        onehot[class_id] = 1
        return cls(int(epsilon), tuple(onehot))

    @property
    def num_classes(self) -> int:
        return len(self.label)

    @property
    def class_id(self) -> int:
        """Index of the hot component. Raises if the label is not one-hot."""
        if not is_one_hot(self.label):
            raise ValueError(f"label {self.label} is not one-hot")
        return self.label.index(1)


@dataclass(frozen=True)
class Proposal:
    start: float
    end: float
    label: int
    confidence: float

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class PseudoLabel:
    point: int
    start: float
    end: float
    label: int


@dataclass(frozen=True)
class Detection:
    """A scored interval produced at inference; the evaluated object."""

    video_id: str
    start: float
    end: float
    label: int
    score: float


@dataclass(frozen=True)
class GroundTruth:
    start: float
    end: float
    label: int


@dataclass(frozen=True, eq=False)
class VideoRecord:
    """One untrimmed video on the snippet grid.

    ``ground_truth`` exists for synthetic and evaluation data only; the
    training stages never read it.
    """

    id: str
    T: int
    num_classes: int
    features: Optional[np.ndarray] = None
    points: tuple[PointAnnotation, ...] = ()
    ground_truth: Optional[tuple[GroundTruth, ...]] = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoRecord):
            return NotImplemented
        if (self.id, self.T, self.num_classes, self.points, self.ground_truth) != (
            other.id, other.T, other.num_classes, other.points, other.ground_truth
        ):
            return False
        if self.features is None or other.features is None:
            return self.features is None and other.features is None
        return (
            self.features.shape == other.features.shape
            and bool(np.array_equal(self.features, other.features))
        )

    __hash__ = None  # type: ignore[assignment]

    def with_points(self, points: Iterable[PointAnnotation]) -> "VideoRecord":
        return VideoRecord(self.id, self.T, self.num_classes, self.features,
                           tuple(points), self.ground_truth)

    def without_ground_truth(self) -> "VideoRecord":
        return VideoRecord(self.id, self.T, self.num_classes, self.features,
                           self.points, None)


@dataclass(frozen=True)
class ClassDurationStats:
    """Per-class mean proposal duration and the number of contributing seeds."""

    mean_duration: dict[int, float] = field(default_factory=dict)
    count: dict[int, int] = field(default_factory=dict)
    overall_mean: Optional[float] = None

    def get(self, class_id: int) -> Optional[float]:
        if self.count.get(class_id, 0) > 0:
            return self.mean_duration[class_id]
        return None

    @property
    def global_mean(self) -> Optional[float]:
        """Mean over all seeds regardless of class."""
        if self.overall_mean is not None:
            return self.overall_mean
        total = sum(self.count.values())
        if total == 0:
            return None
        weighted = sum(self.mean_duration[c] * n for c, n in self.count.items() if n > 0)
        return weighted / total


def is_one_hot(label: Sequence[int]) -> bool:
    return len(label) > 0 and sum(1 for v in label if v == 1) == 1 and all(
        v in (0, 1) for v in label
    )


def derive_video_labels(video: VideoRecord) -> np.ndarray:
    """Binary class-presence vector aggregated from the point labels."""
    presence = np.zeros(video.num_classes, dtype=np.int64)
    for point in video.points:
        presence[point.class_id] = 1
    return presence


def validate_dataset(videos: Sequence[VideoRecord]) -> list[str]:
    """Return one human-readable description per invariant violation."""
    problems: list[str] = []
    seen: set[str] = set()
    for video in videos:
        where = f"video {video.id!r}"
        if video.id in seen:
            problems.append(f"{where}: duplicate video id")
        seen.add(video.id)
        if video.T < 1:
            problems.append(f"{where}: length T={video.T} must be >= 1")
        if video.num_classes < 1:
            problems.append(f"{where}: num_classes={video.num_classes} must be >= 1")
        if video.features is not None:
            feats = np.asarray(video.features)
            if feats.ndim != 2 or feats.shape[0] != video.T:
                problems.append(f"{where}: features shape {feats.shape} does not match T={video.T}")
            elif not np.all(np.isfinite(feats)):
                problems.append(f"{where}: features contain non-finite values")
        for i, point in enumerate(video.points):
            if not 0 <= point.epsilon < video.T:
                problems.append(f"{where} point {i}: point out of range (epsilon={point.epsilon}, T={video.T})")
            if len(point.label) != video.num_classes:
                problems.append(f"{where} point {i}: label length {len(point.label)} != C={video.num_classes}")
            if not is_one_hot(point.label):
                problems.append(f"{where} point {i}: label not one-hot")
        for i, gt in enumerate(video.ground_truth or ()):
            if not gt.start < gt.end:
                problems.append(f"{where} ground truth {i}: start {gt.start} not before end {gt.end}")
            if gt.start < 0 or gt.end > video.T:
                problems.append(f"{where} ground truth {i}: interval outside [0, {video.T}]")
            if not 0 <= gt.label < video.num_classes:
                problems.append(f"{where} ground truth {i}: class {gt.label} out of range")
    return problems


def validate_proposals(proposals: Iterable[Proposal], num_classes: Optional[int] = None) -> list[str]:
    problems = []
    for i, p in enumerate(proposals):
        if not p.start < p.end:
            problems.append(f"proposal {i}: start {p.start} not before end {p.end}")
        if p.start < 0:
            problems.append(f"proposal {i}: negative start {p.start}")
        if num_classes is not None and not 0 <= p.label < num_classes:
            problems.append(f"proposal {i}: class {p.label} out of range")
    return problems


def seconds_to_snippets(seconds: float, fps: float, frames_per_snippet: int) -> float:
    """Convert a timestamp in seconds to snippet units."""
    if fps <= 0 or frames_per_snippet <= 0:
        raise ValueError("fps and frames_per_snippet must be positive")
    return seconds * fps / frames_per_snippet
