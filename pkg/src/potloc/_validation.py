"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from sklearn.utils.validation import check_is_fitted  # noqa: F401  (re-exported)

from .core import VideoRecord, validate_dataset


def check_videos(videos, require_features: bool = False) -> list[VideoRecord]:
    """Return ``videos`` as a list after checking every record invariant."""
    if isinstance(videos, VideoRecord):
        videos = [videos]
    videos = list(videos)
    if not all(isinstance(v, VideoRecord) for v in videos):
        raise TypeError("expected a sequence of VideoRecord")
    problems = validate_dataset(videos)
    if require_features:
        problems += [f"video {v.id!r}: features missing" for v in videos if v.features is None]
    if problems:
        raise ValueError("invalid dataset:\n  " + "\n  ".join(problems))
    return videos


def check_score_levels(levels: Sequence[np.ndarray], num_classes: int | None = None) -> list[np.ndarray]:
    """Validate one video's per-level ``T_l x (C+1)`` probabilities."""
    out = []
    for i, P in enumerate(levels):
        P = np.asarray(P, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] < 2:
            raise ValueError(f"level {i}: expected a T x (C+1) matrix, got shape {P.shape}")
        if num_classes is not None and P.shape[1] != num_classes + 1:
            raise ValueError(f"level {i}: expected {num_classes + 1} columns, got {P.shape[1]}")
        if not np.all((P >= 0) & (P <= 1)):
            raise ValueError(f"level {i}: scores must lie in [0, 1]")
        out.append(P)
    if not out:
        raise ValueError("no score levels")
    return out


def check_scores(scores: Mapping[str, Sequence[np.ndarray]]) -> dict[str, list[np.ndarray]]:
    return {vid: check_score_levels(levels) for vid, levels in scores.items()}
