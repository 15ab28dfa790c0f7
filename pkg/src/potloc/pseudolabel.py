"""Turn noisy proposals plus point annotations into one pseudo-label per point.

The refinement runs in three passes over the training set:

1. every proposal that contains exactly one same-class point becomes a
   *seed* for that point;
2. the mean seed duration is computed per class (once, from the seeds);
3. each point keeps its highest-confidence seed, or, when it has none, the
   highest-confidence raw proposal covering it, truncated to half the class
   mean duration on either side of the point.

A point covered by no proposal at all gets a symmetric interval of the same
half-width, clipped to the video. Equal confidences are broken by the
smaller start, then the smaller end.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .core import ClassDurationStats, PointAnnotation, Proposal, PseudoLabel


@dataclass(frozen=True)
class RefinementConfig:
    default_duration: float = 8.0

    def __post_init__(self):
        if not self.default_duration > 0:
            raise ValueError(f"default_duration must be > 0, got {self.default_duration}")


def point_in_proposal(proposal: Proposal, point: PointAnnotation) -> bool:
    """Same class and ``start <= epsilon <= end`` (both ends inclusive)."""
    return proposal.label == point.class_id and proposal.start <= point.epsilon <= proposal.end


def _rank_key(p: Proposal):
    return (-p.confidence, p.start, p.end)


def _seeds_by_point(proposals: Sequence[Proposal], points: Sequence[PointAnnotation]) -> dict[int, list[Proposal]]:
    seeds: dict[int, list[Proposal]] = defaultdict(list)
    for prop in proposals:
        inside = [i for i, pt in enumerate(points) if point_in_proposal(prop, pt)]
        if len(inside) == 1:
            seeds[inside[0]].append(prop)
    return seeds


def seed_singleton_proposals(
    proposals: Sequence[Proposal], points: Sequence[PointAnnotation]
) -> list[tuple[PseudoLabel, float]]:
    """Proposals containing exactly one matching point, paired with their confidence.

    Results follow the input order of ``proposals``.
    """
    out = []
    for prop in proposals:
        inside = [pt for pt in points if point_in_proposal(prop, pt)]
        if len(inside) == 1:
            out.append((PseudoLabel(inside[0].epsilon, prop.start, prop.end, prop.label), prop.confidence))
    return out


def class_mean_durations(seeds: Sequence[tuple[PseudoLabel, float]]) -> ClassDurationStats:
    lengths: dict[int, list[float]] = defaultdict(list)
    for label, _ in seeds:
        lengths[label.label].append(label.end - label.start)
    # fsum keeps the mean independent of seed order
    everything = [d for v in lengths.values() for d in v]
    return ClassDurationStats(
        mean_duration={c: math.fsum(v) / len(v) for c, v in lengths.items()},
        count={c: len(v) for c, v in lengths.items()},
        overall_mean=math.fsum(everything) / len(everything) if everything else None,
    )


def half_width(stats: ClassDurationStats, class_id: int, config: RefinementConfig) -> float:
    duration = stats.get(class_id)
    if duration is None:
        duration = stats.global_mean
    if duration is None:
        duration = config.default_duration
    return duration / 2.0


def refine_video(
    proposals: Sequence[Proposal],
    points: Sequence[PointAnnotation],
    stats: ClassDurationStats,
    config: RefinementConfig,
    length: Optional[float] = None,
) -> list[PseudoLabel]:
    """Pseudo-labels for one video, in the order of ``points``."""
    seeds = _seeds_by_point(proposals, points)
    out = []
    for i, pt in enumerate(points):
        eps, cls = pt.epsilon, pt.class_id
        delta = half_width(stats, cls, config)
        if seeds.get(i):
            best = min(seeds[i], key=_rank_key)
            out.append(PseudoLabel(eps, best.start, best.end, cls))
            continue
        covering = [p for p in proposals if point_in_proposal(p, pt)]
        if covering:
            best = min(covering, key=_rank_key)
            start, end = max(best.start, eps - delta), min(best.end, eps + delta)
        else:
            start = max(0.0, eps - delta)
            end = eps + delta if length is None else min(float(length), eps + delta)
        out.append(PseudoLabel(eps, float(start), float(end), cls))
    return out


def collect_seeds(
    proposals: Mapping[str, Sequence[Proposal]], points: Mapping[str, Sequence[PointAnnotation]]
) -> list[tuple[PseudoLabel, float]]:
    seeds = []
    for vid, pts in points.items():
        seeds.extend(seed_singleton_proposals(proposals.get(vid, ()), pts))
    return seeds


def generate_pseudo_labels(
    proposals: Mapping[str, Sequence[Proposal]],
    points: Mapping[str, Sequence[PointAnnotation]],
    config: RefinementConfig = RefinementConfig(),
    lengths: Optional[Mapping[str, float]] = None,
) -> dict[str, list[PseudoLabel]]:
    """Refine every video's proposals into pseudo-labels.

    Class statistics are pooled over all videos before any point is
    resolved. ``lengths`` (video id to T) bounds the no-coverage fallback
    interval on the right; without it only the left bound at 0 applies.
    """
    if not config.default_duration > 0:
        raise ValueError("default_duration must be > 0")
    stats = class_mean_durations(collect_seeds(proposals, points))
    lengths = lengths or {}
    return {
        vid: refine_video(proposals.get(vid, ()), pts, stats, config, lengths.get(vid))
        for vid, pts in points.items()
    }
