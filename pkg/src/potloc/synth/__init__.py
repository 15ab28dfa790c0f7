from .generate import (
    SynthConfig,
    class_signatures,
    gen_dataset,
    gen_video,
    perturb_to_noisy_proposals,
    stream_rng,
)
from .oracles import oracle_ap, oracle_evaluate, oracle_pseudolabels, oracle_tiou

__all__ = [
    "SynthConfig",
    "class_signatures",
    "gen_dataset",
    "gen_video",
    "oracle_ap",
    "oracle_evaluate",
    "oracle_pseudolabels",
    "oracle_tiou",
    "perturb_to_noisy_proposals",
    "stream_rng",
]
