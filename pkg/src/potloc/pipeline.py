"""Stage functions chaining training, proposal generation, refinement and inference.

Ground truth is never read here: training consumes features and points
(or pseudo-labels), and everything downstream consumes score sequences.
"""
from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .backbone import BackboneConfig, TemporalPyramidNet
from .core import Detection, PointAnnotation, Proposal, PseudoLabel, VideoRecord
from .losses import LossWeights, PointSupervision, PseudoLabelSupervision, video_level_scores
from .postprocess import ProposalConfig, generate_proposals
from .pseudolabel import RefinementConfig, generate_pseudo_labels
from .trainer import TrainerConfig, fit_logits

ScorePyramids = dict[str, list[np.ndarray]]


def _run(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs == 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    return Parallel(n_jobs=jobs)(delayed(fn)(*it) for it in items)


class BackboneFeatures:
    """Feature source running a seeded, untrained backbone; ``seed`` picks the weights."""

    def __init__(self, config: BackboneConfig, levels: int):
        if config.sigma < 2 or levels > config.levels:
            raise ValueError(f"backbone has {config.levels} levels, {levels} requested")
        self.config = config
        self.levels = levels

    def __call__(self, features: np.ndarray, seed: int) -> list[np.ndarray]:
        net = TemporalPyramidNet.initialize(self.config, seed)
        return net.forward_features(features)[: self.levels + 1]


def _fit_one(video: VideoRecord, supervision, weights: LossWeights, trainer: TrainerConfig,
             levels: int, sigma: int, seed: int, backbone: Optional[BackboneConfig]) -> list[np.ndarray]:
    source = "pooled"
    if trainer.features == "backbone":
        config = backbone or BackboneConfig(d_in=video.features.shape[1], sigma=sigma,
                                            levels=max(1, levels), num_classes=video.num_classes)
        if config.sigma != sigma:
            raise ValueError(f"backbone sigma {config.sigma} != pyramid sigma {sigma}")
        source = BackboneFeatures(config, levels)
    table = fit_logits(video, supervision, weights, trainer.steps, trainer.learning_rate, seed,
                       levels=levels, sigma=sigma, readout=trainer.readout, momentum=trainer.momentum,
                       context=trainer.context, feature_source=source)
    return table.probabilities()


def train_base(videos: Sequence[VideoRecord], weights: LossWeights = LossWeights(),
               trainer: TrainerConfig = TrainerConfig(), seed: int = 0, jobs: int = 1,
               sigma: int = 2, backbone: Optional[BackboneConfig] = None) -> ScorePyramids:
    """Fit level-0 scores per video from its points."""
    items = [(v.without_ground_truth(), PointSupervision(tuple(v.points), v.num_classes),
              weights, trainer, 0, sigma, seed, backbone) for v in videos]
    return {v.id: p for v, p in zip(videos, _run(_fit_one, items, jobs))}


def train_potloc(videos: Sequence[VideoRecord], pseudo_labels: Mapping[str, Sequence[PseudoLabel]],
                 weights: LossWeights = LossWeights(), trainer: TrainerConfig = TrainerConfig(),
                 levels: int = 4, sigma: int = 2, seed: int = 0, jobs: int = 1,
                 backbone: Optional[BackboneConfig] = None) -> ScorePyramids:
    """Fit a ``levels + 1`` score pyramid per video from its pseudo-labels."""
    items = [(v.without_ground_truth(),
              PseudoLabelSupervision(tuple(pseudo_labels.get(v.id, ())), v.num_classes, sigma),
              weights, trainer, levels, sigma, seed, backbone) for v in videos]
    return {v.id: p for v, p in zip(videos, _run(_fit_one, items, jobs))}


def propose(scores: Mapping[str, Sequence[np.ndarray]], config: ProposalConfig = ProposalConfig(),
            top_k: Optional[int] = None) -> dict[str, list[Proposal]]:
    """Proposals per video from (possibly multi-level) score sequences."""
    return {vid: generate_proposals(levels, video_level_scores(levels, top_k), config)
            for vid, levels in scores.items()}


def infer(scores: Mapping[str, Sequence[np.ndarray]], config: ProposalConfig = ProposalConfig(),
          top_k: Optional[int] = None) -> list[Detection]:
    return [Detection(vid, p.start, p.end, p.label, p.confidence)
            for vid, props in propose(scores, config, top_k).items() for p in props]


def as_detections(proposals: Mapping[str, Sequence[Proposal]]) -> list[Detection]:
    return [Detection(vid, p.start, p.end, p.label, p.confidence)
            for vid, props in proposals.items() for p in props]


def refine(proposals: Mapping[str, Sequence[Proposal]], videos: Sequence[VideoRecord],
           config: RefinementConfig = RefinementConfig()) -> dict[str, list[PseudoLabel]]:
    points: dict[str, list[PointAnnotation]] = {v.id: list(v.points) for v in videos}
    return generate_pseudo_labels(proposals, points, config, {v.id: v.T for v in videos})
