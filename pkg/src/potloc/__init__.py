"""Point-supervised temporal action localization with pseudo-label self-training."""
from __future__ import annotations

from .core import (
    ClassDurationStats,
    Detection,
    GroundTruth,
    PointAnnotation,
    Proposal,
    PseudoLabel,
    VideoRecord,
    derive_video_labels,
    validate_dataset,
)
from .estimators import (
    POTLocLocalizer,
    PointSupervisedLocalizer,
    PseudoLabelRefiner,
    TemporalPyramidBackbone,
)
from .metrics import EvalConfig, EvalReport, evaluate, tiou
from .postprocess import ProposalConfig, generate_proposals, temporal_nms
from .pseudolabel import RefinementConfig, generate_pseudo_labels

__version__ = "0.1.0"

__all__ = [
    "ClassDurationStats",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "GroundTruth",
    "POTLocLocalizer",
    "PointAnnotation",
    "PointSupervisedLocalizer",
    "Proposal",
    "ProposalConfig",
    "PseudoLabel",
    "PseudoLabelRefiner",
    "RefinementConfig",
    "TemporalPyramidBackbone",
    "VideoRecord",
    "derive_video_labels",
    "evaluate",
    "generate_proposals",
    "generate_pseudo_labels",
    "temporal_nms",
    "tiou",
    "validate_dataset",
]
