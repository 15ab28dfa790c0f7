"""Score fusion and proposal generation from snippet-level score sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Proposal
from .metrics import tiou


def _default_thresholds() -> tuple[float, ...]:
    return tuple(round(0.1 * i, 10) for i in range(1, 10))


@dataclass(frozen=True)
class ProposalConfig:
    video_class_threshold: float = 0.5
    snippet_thresholds: tuple[float, ...] = field(default_factory=_default_thresholds)
    nms_tiou: float = 0.6
    oic_outer_fraction: float = 0.25
    sigma: int = 2

    def __post_init__(self):
        object.__setattr__(self, "snippet_thresholds", tuple(float(t) for t in self.snippet_thresholds))
        if not 0 < self.video_class_threshold < 1:
            raise ValueError("video_class_threshold must lie in (0, 1)")
        if not self.snippet_thresholds or not all(0 < t < 1 for t in self.snippet_thresholds):
            raise ValueError("snippet_thresholds must be a nonempty list of values in (0, 1)")
        if not 0 < self.nms_tiou <= 1:
            raise ValueError("nms_tiou must lie in (0, 1]")
        if not 0 < self.oic_outer_fraction <= 1:
            raise ValueError("oic_outer_fraction must lie in (0, 1]")
        if self.sigma < 2:
            raise ValueError("sigma must be >= 2")


def fuse_scores(P: np.ndarray) -> np.ndarray:
    """Scale every class column by the actionness ``1 - background``.

    The last column (background) is passed through unchanged.
    """
    P = np.asarray(P, dtype=np.float64)
    fused = P.copy()
    fused[:, :-1] *= 1.0 - P[:, -1:]
    return fused


def segment_candidates(scores: Sequence[float], threshold: float) -> list[tuple[int, int]]:
    """Maximal runs with ``score >= threshold`` as inclusive index pairs."""
    mask = np.asarray(scores, dtype=np.float64) >= threshold
    if not mask.any():
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def oic_score(scores: Sequence[float], segment: tuple[int, int], outer_fraction: float) -> float:
    """Inner mean minus the mean of both flanking regions pooled together.

    Each flank is ``max(1, round(outer_fraction * length))`` snippets long
    before clipping to the sequence; with no flank left the inner mean is
    returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    start, end = segment
    inner = scores[start:end + 1].mean()
    width = max(1, _round_half_up(outer_fraction * (end - start + 1)))
    left = scores[max(0, start - width):start]
    right = scores[end + 1:min(len(scores), end + 1 + width)]
    if left.size + right.size == 0:
        return float(inner)
    outer = np.concatenate((left, right)).mean()
    return float(inner - outer)


def _nms_order(p: Proposal):
    return (-p.confidence, p.start, p.end, p.label)


def temporal_nms(proposals: Sequence[Proposal], tiou_threshold: float) -> list[Proposal]:
    """Greedy class-wise suppression.

    A proposal survives iff its tIoU with every kept proposal of the same
    class is below the threshold. Survivors come back in descending
    confidence order.
    """
    kept: list[Proposal] = []
    by_class: dict[int, list[Proposal]] = {}
    for prop in sorted(proposals, key=_nms_order):
        same = by_class.setdefault(prop.label, [])
        if all(tiou((prop.start, prop.end), (k.start, k.end)) < tiou_threshold for k in same):
            same.append(prop)
            kept.append(prop)
    return kept


def generate_proposals(
    P_levels: Sequence[np.ndarray],
    video_scores: Sequence[float],
    config: ProposalConfig = ProposalConfig(),
) -> list[Proposal]:
    """Threshold, merge, score and suppress candidate segments on every level.

    ``P_levels[l]`` holds raw (unfused) probabilities at temporal stride
    ``sigma**l``. Level-l segments ``(a, b)`` map to the level-0 interval
    ``[a * sigma**l, (b + 1) * sigma**l)``, clipped to the level-0 length.
    """
    if len(P_levels) == 0:
        return []
    T = P_levels[0].shape[0]
    num_classes = P_levels[0].shape[1] - 1
    classes = [c for c in range(num_classes) if video_scores[c] >= config.video_class_threshold]
    candidates: list[Proposal] = []
    for level, P in enumerate(P_levels):
        fused = fuse_scores(P)
        stride = config.sigma ** level
        for c in classes:
            track = fused[:, c]
            seen: set[tuple[int, int]] = set()
            for thr in config.snippet_thresholds:
                for seg in segment_candidates(track, thr):
                    if seg in seen:
                        continue
                    seen.add(seg)
                    score = max(0.0, oic_score(track, seg, config.oic_outer_fraction))
                    start = float(seg[0] * stride)
                    end = float(min(T, (seg[1] + 1) * stride))
                    if start < end:
                        candidates.append(Proposal(start, end, c, score))
    return temporal_nms(candidates, config.nms_tiou)
