"""Point- and pseudo-label-supervised losses with analytic gradients.

Score sequences are ``T x (C+1)`` arrays whose last column is the
background probability. Every loss returns ``(value, gradient)`` where the
gradient has the shape of the scores it was computed from. Scores are
clamped to ``[EPS, 1 - EPS]``; the gradient is zero where clamping is
active, which is the exact derivative of the clamped loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .core import PointAnnotation, PseudoLabel
from .postprocess import fuse_scores

EPS = 1e-7

ScoreLevels = Union[np.ndarray, Sequence[np.ndarray]]


@dataclass(frozen=True)
class LossWeights:
    lambda_mil: float = 1.0
    lambda_act: float = 1.0
    lambda_bg: float = 1.0
    gamma: float = 2.0
    top_k: Optional[int] = None
    bg_threshold: float = 0.5
    radius: int = 2
    radius_mode: Literal["grid", "scaled"] = "grid"

    def __post_init__(self):
        if min(self.lambda_mil, self.lambda_act, self.lambda_bg) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if not 0 < self.bg_threshold < 1:
            raise ValueError("bg_threshold must lie in (0, 1)")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.radius_mode not in ("grid", "scaled"):
            raise ValueError(f"unknown radius_mode {self.radius_mode!r}")


def default_top_k(length: int) -> int:
    return max(1, length // 8)


def pyramid_lengths(T: int, sigma: int, levels: int) -> list[int]:
    """``[T_0, ..., T_levels]`` with ``T_l = ceil(T_{l-1} / sigma)``."""
    out = [int(T)]
    for _ in range(levels):
        out.append(-(-out[-1] // sigma))
    return out


def _as_levels(P: ScoreLevels) -> list[np.ndarray]:
    if isinstance(P, np.ndarray) and P.ndim == 2:
        return [P]
    return [np.asarray(p, dtype=np.float64) for p in P]


def _clamp(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clipped = np.clip(x, EPS, 1.0 - EPS)
    return clipped, (x >= EPS) & (x <= 1.0 - EPS)


def _focal(q: np.ndarray, y: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise focal loss and its derivative in ``q``.

    ``y = 1`` contributes ``-(1-q)^g log q``; ``y = 0`` contributes
    ``-q^g log(1-q)``. With ``g = 0`` this is binary cross-entropy.
    """
    qc, inside = _clamp(np.asarray(q, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    log_q, log_nq = np.log(qc), np.log1p(-qc)
    pos_w, neg_w = (1.0 - qc) ** gamma, qc ** gamma
    value = -(y * pos_w * log_q + (1.0 - y) * neg_w * log_nq)
    if gamma == 0:
        d_pos = -1.0 / qc
        d_neg = 1.0 / (1.0 - qc)
    else:
        d_pos = gamma * (1.0 - qc) ** (gamma - 1.0) * log_q - pos_w / qc
        d_neg = -gamma * qc ** (gamma - 1.0) * log_nq + neg_w / (1.0 - qc)
    grad = (y * d_pos + (1.0 - y) * d_neg) * inside
    return value, grad


# video-level prediction and the MIL loss

def _top_k_pool(P: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class mean of the K largest scores and the chosen row indices."""
    scores = P[:, :-1]
    T = scores.shape[0]
    if not 1 <= K <= T:
        raise ValueError(f"top-K requires 1 <= K <= T, got K={K}, T={T}")
    # stable descending sort: ties go to the earlier snippet
    idx = np.argsort(-scores, axis=0, kind="stable")[:K]
    pooled = np.take_along_axis(scores, idx, axis=0).mean(axis=0)
    return pooled, idx


def video_level_scores(P: ScoreLevels, K: Optional[int] = None) -> np.ndarray:
    """Top-K mean per class, averaged across levels when given a pyramid.

    ``K=None`` applies ``max(1, T_l // 8)`` on each level.
    """
    levels = _as_levels(P)
    pooled = [_top_k_pool(p, K if K is not None else default_top_k(len(p)))[0] for p in levels]
    return np.mean(pooled, axis=0)


def _video_scores_backward(levels: list[np.ndarray], K: Optional[int], d_scores: np.ndarray) -> list[np.ndarray]:
    grads = []
    for p in levels:
        k = K if K is not None else default_top_k(len(p))
        _, idx = _top_k_pool(p, k)
        g = np.zeros_like(p)
        share = d_scores / (k * len(levels))
        np.add.at(g[:, :-1], (idx, np.broadcast_to(np.arange(p.shape[1] - 1), idx.shape)),
                  np.broadcast_to(share, idx.shape))
        grads.append(g)
    return grads


def mil_loss(video_scores: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy summed over classes."""
    value, grad = _focal(video_scores, label, 0.0)
    return float(value.sum()), grad


# snippet-level action loss

def _positive_loss(fused_levels: list[np.ndarray], positives: list[list[tuple[int, int]]],
                   gamma: float) -> tuple[float, list[np.ndarray]]:
    grads = [np.zeros_like(f) for f in fused_levels]
    total = sum(len(p) for p in positives)
    if total == 0:
        return 0.0, grads
    value = 0.0
    for f, g, pos in zip(fused_levels, grads, positives):
        if not pos:
            continue
        rows = np.array([t for t, _ in pos])
        y = np.zeros((len(pos), f.shape[1] - 1))
        y[np.arange(len(pos)), [c for _, c in pos]] = 1.0
        v, d = _focal(f[rows, :-1], y, gamma)
        value += v.sum()
        np.add.at(g[:, :-1], rows, d)
    return float(value / total), [g / total for g in grads]


def act_focal_loss(P_hat: np.ndarray, points: Sequence[PointAnnotation], gamma: float = 2.0
                   ) -> tuple[float, np.ndarray]:
    """Focal loss at the annotated snippets, averaged over points."""
    positives = [(p.epsilon, p.class_id) for p in points]
    value, grads = _positive_loss([np.asarray(P_hat, dtype=np.float64)], [positives], gamma)
    return value, grads[0]


# background modelling

def background_seeds(P_hat: np.ndarray, threshold: float, excluded: Iterable[int] = ()) -> list[int]:
    """Positions whose background score reaches ``threshold``, minus ``excluded``."""
    skip = set(excluded)
    hits = np.flatnonzero(np.asarray(P_hat)[:, -1] >= threshold)
    return [int(t) for t in hits if int(t) not in skip]


def bg_loss(P_hat: np.ndarray, seeds: Sequence[int], gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Push class scores to 0 and background to 1 at the seeds; mean over seeds."""
    P_hat = np.asarray(P_hat, dtype=np.float64)
    grad = np.zeros_like(P_hat)
    if len(seeds) == 0:
        return 0.0, grad
    rows = np.asarray(list(seeds), dtype=np.int64)
    y = np.zeros((len(rows), P_hat.shape[1]))
    y[:, -1] = 1.0
    v, d = _focal(P_hat[rows], y, gamma)
    np.add.at(grad, rows, d / len(rows))
    return float(v.sum() / len(rows)), grad


# pseudo-label sampling

@dataclass(frozen=True)
class SampledPositives:
    """Per pyramid level, sorted unique ``(position, class_id)`` pairs."""

    levels: tuple[tuple[tuple[int, int], ...], ...]

    def positions(self, level: int) -> set[int]:
        return {t for t, _ in self.levels[level]}

    @property
    def total(self) -> int:
        return sum(len(x) for x in self.levels)


def sample_pseudo_labels(
    pseudo_labels: Sequence[PseudoLabel],
    sigma: int,
    levels: int,
    radius: int,
    T: int,
    mode: str = "grid",
) -> SampledPositives:
    """Project each pseudo-label onto every level and keep a window around its point.

    On level ``l`` the point lands at ``floor(eps / sigma**l + 0.5)``; the
    kept positions are those within ``radius`` grid cells of it (``radius *
    sigma**l`` cells in ``"scaled"`` mode) that also fall inside
    ``[ceil(s / sigma**l), floor(e / sigma**l)]`` and inside the level.
    """
    if sigma < 2:
        raise ValueError("sigma must be >= 2")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    out = []
    for level, length in enumerate(pyramid_lengths(T, sigma, levels)):
        scale = sigma ** level
        r = radius if mode == "grid" else radius * scale
        picked: set[tuple[int, int]] = set()
        for pl in pseudo_labels:
            center = math.floor(pl.point / scale + 0.5)
            lo = max(math.ceil(pl.start / scale), center - r, 0)
            hi = min(math.floor(pl.end / scale), center + r, length - 1)
            picked.update((t, pl.label) for t in range(lo, hi + 1))
        out.append(tuple(sorted(picked)))
    return SampledPositives(tuple(out))


def enhanced_act_loss(P_hat_levels: Sequence[np.ndarray], sampled: SampledPositives, gamma: float = 2.0
                      ) -> tuple[float, list[np.ndarray]]:
    """Focal loss over every sampled positive on every level, divided by their total count."""
    levels = _as_levels(P_hat_levels)
    return _positive_loss(levels, [list(x) for x in sampled.levels], gamma)


def enhanced_bg_loss(P_hat_levels: Sequence[np.ndarray], sampled: SampledPositives, threshold: float,
                     gamma: float = 2.0) -> tuple[float, list[np.ndarray]]:
    """Per-level background loss with sampled positions never used as seeds.

    Averaged over the levels that have at least one seed.
    """
    levels = _as_levels(P_hat_levels)
    results = []
    for level, f in enumerate(levels):
        excluded = sampled.positions(level) if level < len(sampled.levels) else set()
        seeds = background_seeds(f, threshold, excluded)
        results.append((len(seeds), *bg_loss(f, seeds, gamma)))
    active = sum(1 for n, _, _ in results if n > 0)
    if active == 0:
        return 0.0, [np.zeros_like(f) for f in levels]
    value = sum(v for n, v, _ in results if n > 0) / active
    return float(value), [g / active for _, _, g in results]


# joint objective

@dataclass(frozen=True)
class PointSupervision:
    """Base-stage supervision: the annotated points of one video."""

    points: tuple[PointAnnotation, ...]
    num_classes: int

    def video_label(self) -> np.ndarray:
        label = np.zeros(self.num_classes)
        for p in self.points:
            label[p.class_id] = 1.0
        return label


@dataclass(frozen=True)
class PseudoLabelSupervision:
    """Self-training supervision: pseudo-labels sampled on every pyramid level."""

    pseudo_labels: tuple[PseudoLabel, ...]
    num_classes: int
    sigma: int = 2

    def video_label(self) -> np.ndarray:
        label = np.zeros(self.num_classes)
        for p in self.pseudo_labels:
            label[p.label] = 1.0
        return label


Supervision = Union[PointSupervision, PseudoLabelSupervision]


@dataclass(frozen=True)
class LogitTable:
    """Unconstrained per-level logits; ``sigmoid`` gives the score sequences."""

    levels: tuple[np.ndarray, ...]

    def probabilities(self) -> list[np.ndarray]:
        return [expit(z) for z in self.levels]

    @classmethod
    def zeros(cls, lengths: Sequence[int], num_classes: int) -> "LogitTable":
        return cls(tuple(np.zeros((n, num_classes + 1)) for n in lengths))


def _loss_parts(logits: Sequence[np.ndarray], supervision: Supervision, weights: LossWeights):
    logits = [np.asarray(z, dtype=np.float64) for z in logits]
    P = [expit(z) for z in logits]
    fused = [fuse_scores(p) for p in P]
    label = supervision.video_label()

    if isinstance(supervision, PointSupervision):
        if len(logits) != 1:
            raise ValueError("point supervision trains a single level")
        scores = video_level_scores(P, weights.top_k)
        v_mil, d_scores = mil_loss(scores, label)
        d_P_mil = _video_scores_backward(P, weights.top_k, d_scores)
        v_act, g = act_focal_loss(fused[0], supervision.points, weights.gamma)
        d_fused_act = [g]
        seeds = background_seeds(fused[0], weights.bg_threshold)
        v_bg, g = bg_loss(fused[0], seeds, weights.gamma)
        d_fused_bg = [g]
    else:
        T = logits[0].shape[0]
        expected = pyramid_lengths(T, supervision.sigma, len(logits) - 1)
        if [len(z) for z in logits] != expected:
            raise ValueError(f"logit lengths {[len(z) for z in logits]} do not match pyramid {expected}")
        sampled = sample_pseudo_labels(supervision.pseudo_labels, supervision.sigma, len(logits) - 1,
                                       weights.radius, T, weights.radius_mode)
        scores = video_level_scores(P, weights.top_k)
        v_mil, d_scores = mil_loss(scores, label)
        d_P_mil = _video_scores_backward(P, weights.top_k, d_scores)
        v_act, d_fused_act = enhanced_act_loss(fused, sampled, weights.gamma)
        v_bg, d_fused_bg = enhanced_bg_loss(fused, sampled, weights.bg_threshold, weights.gamma)

    parts = {"mil": v_mil, "act": v_act, "bg": v_bg}
    value = weights.lambda_mil * v_mil + weights.lambda_act * v_act + weights.lambda_bg * v_bg

    grads = []
    for l, p in enumerate(P):
        d_fused = weights.lambda_act * d_fused_act[l] + weights.lambda_bg * d_fused_bg[l]
        d_P = weights.lambda_mil * d_P_mil[l]
        b = p[:, -1:]
        d_P[:, :-1] += d_fused[:, :-1] * (1.0 - b)
        d_P[:, -1] += d_fused[:, -1] - (d_fused[:, :-1] * p[:, :-1]).sum(axis=1)
        grads.append(d_P * p * (1.0 - p))
    return float(value), grads, parts


def total_loss(logits: Union[LogitTable, Sequence[np.ndarray]], supervision: Supervision,
               weights: LossWeights = LossWeights()) -> tuple[float, list[np.ndarray]]:
    """Weighted MIL + action + background loss and its gradient w.r.t. every logit."""
    levels = logits.levels if isinstance(logits, LogitTable) else logits
    value, grads, _ = _loss_parts(levels, supervision, weights)
    return value, grads


def loss_components(logits: Union[LogitTable, Sequence[np.ndarray]], supervision: Supervision,
                    weights: LossWeights = LossWeights()) -> dict[str, float]:
    """Unweighted value of each loss term."""
    levels = logits.levels if isinstance(logits, LogitTable) else logits
    return _loss_parts(levels, supervision, weights)[2]
