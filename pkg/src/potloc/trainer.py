"""Gradient-descent fitting of per-video score pyramids.

Two readouts produce the logit table that the losses see:

``"table"``
    every logit is a free parameter (zero-initialised);
``"linear"``
    logits are an affine map of per-level snippet features, shared across
    levels like a decoder head. The weights start at zero, so the initial
    logits are zero as well. The loss gradient w.r.t. the logits is chained
    to the weights with one matrix product per level.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np

from .core import VideoRecord
from .losses import LogitTable, LossWeights, Supervision, pyramid_lengths, total_loss

logger = logging.getLogger(__name__)

FeatureSource = Union[Literal["pooled"], Callable[[np.ndarray, int], Sequence[np.ndarray]]]


def pooled_pyramid(features: np.ndarray, sigma: int, levels: int) -> list[np.ndarray]:
    """Mean-pool non-overlapping windows of ``sigma**l`` snippets for each level."""
    features = np.asarray(features, dtype=np.float64)
    out = [features]
    for _ in range(levels):
        prev = out[-1]
        n = -(-len(prev) // sigma)
        pad = n * sigma - len(prev)
        sums = np.pad(prev, ((0, pad), (0, 0))).reshape(n, sigma, -1).sum(axis=1)
        counts = np.full(n, float(sigma))
        counts[-1] = sigma - pad
        out.append(sums / counts[:, None])
    return out


def with_context(levels: list[np.ndarray], width: int) -> list[np.ndarray]:
    """Append a centred moving average of ``width`` positions to every level."""
    if width <= 1:
        return levels
    out = []
    for f in levels:
        kernel = np.ones(width)
        padded = np.pad(f, ((width // 2, (width - 1) // 2), (0, 0)))
        ones = np.pad(np.ones(len(f)), (width // 2, (width - 1) // 2))
        num = np.stack([np.convolve(padded[:, j], kernel, mode="valid") for j in range(f.shape[1])], axis=1)
        den = np.convolve(ones, kernel, mode="valid")
        out.append(np.hstack((f, num / den[:, None])))
    return out


def _standardize(levels: list[np.ndarray]) -> list[np.ndarray]:
    base = levels[0]
    mu = base.mean(axis=0)
    sd = base.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return [np.hstack(((f - mu) / sd, np.ones((len(f), 1)))) for f in levels]


@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 50
    learning_rate: float = 0.1
    momentum: float = 0.0
    readout: Literal["table", "linear"] = "linear"
    context: int = 5
    features: Literal["pooled", "backbone"] = "pooled"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.context < 1:
            raise ValueError("context must be >= 1")
        if self.readout not in ("table", "linear"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.features not in ("pooled", "backbone"):
            raise ValueError(f"unknown feature source {self.features!r}")


def fit_logits(
    video: VideoRecord,
    supervision: Supervision,
    weights: LossWeights,
    steps: int,
    learning_rate: float,
    seed: int = 0,
    *,
    levels: int = 0,
    sigma: int = 2,
    readout: str = "table",
    momentum: float = 0.0,
    feature_source: FeatureSource = "pooled",
    context: int = 1,
    history: Optional[list] = None,
) -> LogitTable:
    """Minimise :func:`potloc.losses.total_loss` for one video by gradient descent.

    ``levels`` is the number of pyramid levels above level 0 (0 for the
    base stage). ``seed`` is forwarded to a callable ``feature_source``;
    the descent itself is deterministic. If ``history`` is a list, the loss
    at every step (before the update) is appended to it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    C = supervision.num_classes
    lengths = pyramid_lengths(video.T, sigma, levels)

    if readout == "table":
        feats = None
        params = [np.zeros((n, C + 1)) for n in lengths]
    elif readout == "linear":
        if video.features is None:
            raise ValueError(f"video {video.id!r} has no features for the linear readout")
        if feature_source == "pooled":
            raw = pooled_pyramid(video.features, sigma, levels)
        else:
            raw = list(feature_source(video.features, seed))
        if [len(f) for f in raw] != lengths:
            raise ValueError(f"feature pyramid lengths {[len(f) for f in raw]} != {lengths}")
        feats = _standardize(with_context(raw, context))
        params = [np.zeros((feats[0].shape[1], C + 1))]
    else:
        raise ValueError(f"unknown readout {readout!r}")

    def logits_of(params):
        if feats is None:
            return params
        return [f @ params[0] for f in feats]

    velocity = [np.zeros_like(p) for p in params]
    for step in range(steps):
        value, grads = total_loss(logits_of(params), supervision, weights)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise FloatingPointError(
                f"non-finite loss {value!r} at step {step} for video {video.id!r} "
                f"(learning_rate={learning_rate}, readout={readout})")
        if history is not None:
            history.append(value)
        if feats is not None:
            grads = [sum(f.T @ g for f, g in zip(feats, grads))]
        # overflow surfaces as a non-finite loss on the next step
        with np.errstate(over="ignore", invalid="ignore"):
            for v, p, g in zip(velocity, params, grads):
                v *= momentum
                v -= learning_rate * g
                p += v
    logger.debug("video %s: final loss %.6f after %d steps", video.id, value, steps)
    return LogitTable(tuple(np.asarray(z, dtype=np.float64) for z in logits_of(params)))
