from __future__ import annotations

import dataclasses

import numpy as np

from potloc.core import GroundTruth
from potloc.pipeline import propose, refine, train_base, train_potloc
from potloc.synth import SynthConfig, gen_dataset
from potloc.trainer import TrainerConfig

FAST = TrainerConfig(steps=8)


def test_ground_truth_is_never_read():
    videos = gen_dataset(SynthConfig(seed=2, num_videos=2))
    fake = [dataclasses.replace(v, ground_truth=(GroundTruth(0.0, 1.0, 0),)) for v in videos]
    a, b = train_base(videos, trainer=FAST), train_base(fake, trainer=FAST)
    assert all(np.array_equal(x, y) for vid in a for x, y in zip(a[vid], b[vid]))
    pls = refine(propose(a), videos)
    assert pls == refine(propose(b), fake)
    c, d = train_potloc(videos, pls, trainer=FAST, levels=2), train_potloc(fake, pls, trainer=FAST, levels=2)
    assert all(np.array_equal(x, y) for vid in c for x, y in zip(c[vid], d[vid]))


def test_parallel_matches_serial():
    videos = gen_dataset(SynthConfig(seed=2, num_videos=3))
    a, b = train_base(videos, trainer=FAST, jobs=1), train_base(videos, trainer=FAST, jobs=2)
    assert all(np.array_equal(x, y) for vid in a for x, y in zip(a[vid], b[vid]))


def test_backbone_features_run():
    videos = gen_dataset(SynthConfig(seed=2, num_videos=1))
    trainer = TrainerConfig(steps=3, features="backbone")
    out = train_potloc(videos, {}, trainer=trainer, levels=1)
    assert len(out[videos[0].id]) == 2
