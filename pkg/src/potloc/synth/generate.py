"""Seeded synthetic videos with planted actions, points and noisy proposals.

Randomness comes from Philox, a counter-based generator keyed by
``(seed, stream)``. Each video and each proposal-noise pass draws from its
own stream, so any subset can be regenerated independently and in
parallel with identical results.
"""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import GroundTruth, PointAnnotation, Proposal, VideoRecord

_SIGNATURE_STREAM = 0xC1A55
_VIDEO_STREAM = 1 << 32
_PROPOSAL_STREAM = 2 << 32


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_videos: int = 20
    t_min: int = 96
    t_max: int = 160
    num_classes: int = 3
    actions_min: int = 1
    actions_max: int = 4
    duration_mean: tuple[float, ...] = (12.0, 20.0, 30.0)
    duration_spread: float = 4.0
    min_gap: int = 4
    feature_dim: int = 16
    signal: float = 1.0
    feature_noise: float = 0.6
    edge_strength: float = 1.0
    jitter: float = 3.0
    drop_rate: float = 0.1
    duplicate_rate: float = 0.2
    merge_rate: float = 0.1
    confidence_noise: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "duration_mean", tuple(float(d) for d in self.duration_mean))
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError("need 1 <= t_min <= t_max")
        if not 0 <= self.actions_min <= self.actions_max:
            raise ValueError("need 0 <= actions_min <= actions_max")
        if self.num_classes < 1 or self.num_videos < 0:
            raise ValueError("num_classes must be >= 1 and num_videos >= 0")
        if len(self.duration_mean) not in (1, self.num_classes):
            raise ValueError("duration_mean needs one value or one per class")
        if min(self.duration_mean) <= 0 or self.duration_spread < 0:
            raise ValueError("durations must be positive and spread non-negative")
        if self.min_gap < 1:
            raise ValueError("min_gap must be >= 1 so same-class instances never share a boundary")
        for name in ("drop_rate", "duplicate_rate", "merge_rate", "edge_strength"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.jitter, self.feature_noise, self.confidence_noise, self.signal) < 0:
            raise ValueError("noise levels and signal must be >= 0")

    def zero_noise(self) -> "SynthConfig":
        return dataclasses.replace(self, jitter=0.0, drop_rate=0.0, duplicate_rate=0.0,
                                   merge_rate=0.0, confidence_noise=0.0)

    def mean_duration(self, class_id: int) -> float:
        return self.duration_mean[class_id if len(self.duration_mean) > 1 else 0]


def class_signatures(config: SynthConfig) -> np.ndarray:
    """One unit-norm direction per class, scaled by ``signal``."""
    rng = stream_rng(config.seed, _SIGNATURE_STREAM)
    sig = rng.standard_normal((config.num_classes, config.feature_dim))
    sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    return config.signal * sig


def _envelope(length: int, edge_strength: float) -> np.ndarray:
    if length == 1 or edge_strength >= 1:
        return np.ones(length)
    x = np.linspace(0.0, np.pi, length)
    return edge_strength + (1.0 - edge_strength) * np.sin(x)


def gen_video(config: SynthConfig, index: int, signatures: Optional[np.ndarray] = None) -> VideoRecord:
    rng = stream_rng(config.seed, _VIDEO_STREAM + index)
    if signatures is None:
        signatures = class_signatures(config)
    T = int(rng.integers(config.t_min, config.t_max + 1))
    n = int(rng.integers(config.actions_min, config.actions_max + 1))
    classes = rng.integers(0, config.num_classes, size=n)
    durations = [
        max(1, int(round(config.mean_duration(int(c)) + config.duration_spread * rng.uniform(-1, 1))))
        for c in classes
    ]
    slack = T - sum(durations) - max(0, n - 1) * config.min_gap
    if slack < 0:
        raise ValueError(
            f"cannot pack {n} actions of total length {sum(durations)} into T={T} "
            f"with min_gap={config.min_gap}; lower actions_max or durations")
    cuts = np.sort(rng.integers(0, slack + 1, size=n))
    gaps = np.diff(np.concatenate(([0], cuts, [slack])))

    features = config.feature_noise * rng.standard_normal((T, config.feature_dim))
    gts, points = [], []
    cursor = 0
    for i, (c, d) in enumerate(zip(classes, durations)):
        cursor += int(gaps[i]) + (config.min_gap if i > 0 else 0)
        start, end = cursor, cursor + d
        features[start:end] += _envelope(d, config.edge_strength)[:, None] * signatures[c]
        gts.append(GroundTruth(float(start), float(end), int(c)))
        points.append(PointAnnotation.of(int(rng.integers(start, end)), int(c), config.num_classes))
        cursor = end
    return VideoRecord(
        id=f"video_{index:04d}", T=T, num_classes=config.num_classes, features=features,
        points=tuple(points), ground_truth=tuple(gts))


def gen_dataset(config: SynthConfig) -> list[VideoRecord]:
    """Deterministic list of videos with features, points and ground truth."""
    signatures = class_signatures(config)
    return [gen_video(config, i, signatures) for i in range(config.num_videos)]


def perturb_to_noisy_proposals(video: VideoRecord, config: SynthConfig, stream: int = 0) -> list[Proposal]:
    """Jitter, drop, duplicate and merge the ground-truth intervals.

    With every noise knob at zero the output equals the ground truth with
    confidence 1.
    """
    rng = stream_rng(config.seed, _PROPOSAL_STREAM + (stream << 20) + _video_index(video))
    T = float(video.T)

    def jittered(start: float, end: float, label: int) -> Proposal:
        if config.jitter > 0:
            start += rng.normal(0.0, config.jitter)
            end += rng.normal(0.0, config.jitter)
        start, end = min(max(start, 0.0), T), min(max(end, 0.0), T)
        if end - start < 1.0:
            mid = min(max((start + end) / 2.0, 0.5), T - 0.5)
            start, end = max(0.0, mid - 0.5), min(T, mid + 0.5)
        conf = 1.0 - config.confidence_noise * rng.random() if config.confidence_noise > 0 else 1.0
        return Proposal(float(start), float(end), label, float(np.clip(conf, 0.0, 1.0)))

    kept = [g for g in video.ground_truth or () if not rng.random() < config.drop_rate]
    out = []
    for i, g in enumerate(kept):
        out.append(jittered(g.start, g.end, g.label))
        if rng.random() < config.duplicate_rate:
            out.append(jittered(g.start, g.end, g.label))
        if i + 1 < len(kept) and rng.random() < config.merge_rate:
            out.append(jittered(g.start, kept[i + 1].end, g.label))
    return out


def _video_index(video: VideoRecord) -> int:
    digits = "".join(ch for ch in video.id if ch.isdigit())
    return int(digits) if digits else zlib.crc32(video.id.encode()) % (1 << 20)
