"""scikit-learn style wrappers around the pipeline stages.

The localizers are transductive: the desk-scale trainer fits one score
table per video, so ``fit`` learns scores for the videos it is given and
``predict`` turns those scores into detections. Passing videos to
``predict`` restricts the output to them.
"""
from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_is_fitted, check_scores, check_videos
from .backbone import BackboneConfig, TemporalPyramidNet
from .core import Detection, PointAnnotation, Proposal, PseudoLabel, VideoRecord
from .losses import LossWeights
from .pipeline import as_detections, propose, train_base, train_potloc
from .postprocess import ProposalConfig
from .pseudolabel import RefinementConfig, class_mean_durations, collect_seeds, refine_video
from .trainer import TrainerConfig


class _Localizer(BaseEstimator):
    def _selected(self, videos) -> dict[str, list[np.ndarray]]:
        check_is_fitted(self, "scores_")
        if videos is None:
            return self.scores_
        ids = [v.id if isinstance(v, VideoRecord) else str(v) for v in videos]
        missing = [i for i in ids if i not in self.scores_]
        if missing:
            raise ValueError(f"videos were not seen during fit: {missing}")
        return {i: self.scores_[i] for i in ids}

    def propose(self, videos=None) -> dict[str, list[Proposal]]:
        return propose(self._selected(videos), self.proposal or ProposalConfig(sigma=self._sigma()),
                       self._top_k())

    def predict(self, videos=None) -> list[Detection]:
        return as_detections(self.propose(videos))

    def _sigma(self) -> int:
        return 2

    def _top_k(self) -> Optional[int]:
        return (self.weights or LossWeights()).top_k


class PointSupervisedLocalizer(_Localizer):
    """Base stage: level-0 scores fitted from point annotations alone."""

    def __init__(self, weights: Optional[LossWeights] = None, trainer: Optional[TrainerConfig] = None,
                 proposal: Optional[ProposalConfig] = None, seed: int = 0, jobs: int = 1):
        self.weights = weights
        self.trainer = trainer
        self.proposal = proposal
        self.seed = seed
        self.jobs = jobs

    def fit(self, videos: Sequence[VideoRecord], y=None) -> "PointSupervisedLocalizer":
        videos = check_videos(videos, require_features=True)
        self.scores_ = train_base(videos, self.weights or LossWeights(), self.trainer or TrainerConfig(),
                                  self.seed, self.jobs)
        self.n_videos_ = len(videos)
        return self


class POTLocLocalizer(_Localizer):
    """Self-training stage: a score pyramid fitted from pseudo-labels."""

    def __init__(self, weights: Optional[LossWeights] = None, trainer: Optional[TrainerConfig] = None,
                 proposal: Optional[ProposalConfig] = None, levels: int = 4, sigma: int = 2,
                 seed: int = 0, jobs: int = 1):
        self.weights = weights
        self.trainer = trainer
        self.proposal = proposal
        self.levels = levels
        self.sigma = sigma
        self.seed = seed
        self.jobs = jobs

    def _sigma(self) -> int:
        return self.sigma

    def fit(self, videos: Sequence[VideoRecord],
            pseudo_labels: Mapping[str, Sequence[PseudoLabel]]) -> "POTLocLocalizer":
        videos = check_videos(videos, require_features=True)
        if self.levels < 0 or self.sigma < 2:
            raise ValueError("need levels >= 0 and sigma >= 2")
        self.scores_ = train_potloc(videos, pseudo_labels, self.weights or LossWeights(),
                                    self.trainer or TrainerConfig(), self.levels, self.sigma,
                                    self.seed, self.jobs)
        self.n_videos_ = len(videos)
        return self


class PseudoLabelRefiner(TransformerMixin, BaseEstimator):
    """Pseudo-label refinement with class statistics learned in ``fit``.

    ``fit`` pools the singleton seeds of every video into per-class mean
    durations; ``transform`` resolves each point against them. Fitting and
    transforming the same data reproduces
    :func:`potloc.pseudolabel.generate_pseudo_labels`.
    """

    def __init__(self, default_duration: float = 8.0):
        self.default_duration = default_duration

    def fit(self, proposals: Mapping[str, Sequence[Proposal]],
            points: Mapping[str, Sequence[PointAnnotation]]) -> "PseudoLabelRefiner":
        self.config_ = RefinementConfig(self.default_duration)
        self.stats_ = class_mean_durations(collect_seeds(proposals, points))
        return self

    def transform(self, proposals: Mapping[str, Sequence[Proposal]],
                  points: Mapping[str, Sequence[PointAnnotation]],
                  lengths: Optional[Mapping[str, float]] = None) -> dict[str, list[PseudoLabel]]:
        check_is_fitted(self, "stats_")
        lengths = lengths or {}
        return {vid: refine_video(proposals.get(vid, ()), pts, self.stats_, self.config_, lengths.get(vid))
                for vid, pts in points.items()}

    def fit_transform(self, proposals, points, lengths=None):
        return self.fit(proposals, points).transform(proposals, points, lengths)


class TemporalPyramidBackbone(TransformerMixin, BaseEstimator):
    """Seeded forward-only backbone; ``transform`` maps ``T x D_in`` features to ``Z^0..Z^L``."""

    def __init__(self, d_model: int = 32, heads: int = 4, window: int = 19, sigma: int = 2,
                 levels: int = 4, mlp_ratio: float = 2.0, num_classes: int = 3, seed: int = 0):
        self.d_model = d_model
        self.heads = heads
        self.window = window
        self.sigma = sigma
        self.levels = levels
        self.mlp_ratio = mlp_ratio
        self.num_classes = num_classes
        self.seed = seed

    def fit(self, X, y=None) -> "TemporalPyramidBackbone":
        X = _as_features(X)
        config = BackboneConfig(d_in=X.shape[1], d_model=self.d_model, d_qk=self.d_model, d_v=self.d_model,
                                heads=self.heads, window=self.window, sigma=self.sigma, levels=self.levels,
                                mlp_ratio=self.mlp_ratio, num_classes=self.num_classes)
        self.net_ = TemporalPyramidNet.initialize(config, self.seed)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "net_")
        return self.net_.forward_features(self._check(X))

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-level ``T_l x (C+1)`` probabilities from the shared decoder."""
        check_is_fitted(self, "net_")
        return self.net_.forward_pyramid(self._check(X))[1]

    def _check(self, X) -> np.ndarray:
        X = _as_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X


def _as_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 1:
        raise ValueError(f"expected a non-empty T x D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    return X


def scores_to_proposals(scores, config: ProposalConfig = ProposalConfig(), top_k: Optional[int] = None):
    """Validated :func:`potloc.pipeline.propose`."""
    return propose(check_scores(scores), config, top_k)
