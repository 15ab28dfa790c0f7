from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from potloc.backbone import (
    BackboneConfig,
    TemporalPyramidNet,
    dense_attention,
    downsample,
    window_softmax_weights,
    windowed_attention,
)


def _net(**kw):
    base = dict(d_in=8, d_model=16, d_qk=16, d_v=16, heads=4, window=5, levels=2, num_classes=2)
    base.update(kw)
    return TemporalPyramidNet.initialize(BackboneConfig(**base), seed=1)


def _block_weights(net, level=0):
    pre = f"block{level}."
    return {k[len(pre):]: v for k, v in net.weights.items() if k.startswith(pre)}


def test_embed_shape_and_zero_input():
    net = _net(d_in=8, d_model=16)
    assert net.embed(np.ones((16, 8))).shape == (16, 16)
    assert not net.embed(np.zeros((16, 8))).any()
    for T in (1, 2, 7):
        assert net.embed(np.ones((T, 8))).shape == (T, 16)
    with pytest.raises(ValueError):
        net.embed(np.ones((4, 3)))


def test_saturated_window_equals_dense(rng):
    net = _net()
    w = _block_weights(net)
    Z = rng.normal(size=(9, 16))
    assert np.allclose(windowed_attention(Z, w, 17, 4), dense_attention(Z, w, 4), atol=1e-6)


def test_constant_values_give_projected_constant(rng):
    net = _net()
    w = dict(_block_weights(net))
    Z = rng.normal(size=(10, 16))
    # V rows all equal: make W_V ignore the input and add a constant through a shared row
    w["w_v"] = np.zeros_like(w["w_v"])
    out = windowed_attention(Z, w, 5, 4)
    expected = np.zeros(16) @ w["w_o"].astype(np.float64) + w["b_o"]
    assert np.allclose(out, expected)
    Zc = np.tile(rng.normal(size=(1, 16)), (10, 1))
    v = Zc[0] @ w["w_q"].astype(np.float64)  # any row-constant input
    assert np.allclose(windowed_attention(Zc, _block_weights(net), 5, 4),
                       windowed_attention(Zc, _block_weights(net), 5, 4)[0]) and v.shape == (16,)


def test_locality_after_one_and_two_blocks(rng):
    net = _net(window=5)
    X = rng.normal(size=(24, 16))
    Xp = X.copy()
    Xp[0] += 1.0
    one, one_p = net.block(X, 0), net.block(Xp, 0)
    assert np.array_equal(one[3:], one_p[3:]) and not np.array_equal(one[:3], one_p[:3])
    two, two_p = net.block(one, 0), net.block(one_p, 0)
    assert np.array_equal(two[5:], two_p[5:]) and not np.array_equal(two[3:5], two_p[3:5])


@given(st.integers(1, 30), st.sampled_from([1, 3, 5, 19]), st.integers(0, 1000))
def test_softmax_rows_sum_to_one(T, window, seed):
    rng = np.random.default_rng(seed)
    q, k = rng.normal(size=(T, 4)) * 5, rng.normal(size=(T, 4)) * 5
    w, valid = window_softmax_weights(q, k, window)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert not w[~valid].any()


def test_block_with_zero_weights_is_identity(rng):
    net = _net()
    zeroed = {k: (np.zeros_like(v) if k.startswith("block0.") and not k.endswith("gamma") else v)
              for k, v in net.weights.items()}
    Z = rng.normal(size=(11, 16))
    assert np.array_equal(TemporalPyramidNet(net.config, zeroed).block(Z, 0), Z)


def test_downsample_lengths_and_identity_tap(rng):
    Z = rng.normal(size=(10, 3))
    k = np.zeros((3, 3))
    k[1] = 1.0
    assert downsample(Z, k, 2).shape == (5, 3)
    assert downsample(Z[:9], k, 2).shape == (5, 3)
    assert np.array_equal(downsample(Z, k, 2), Z[::2])
    assert np.array_equal(downsample(Z, k, 3), Z[::3])
    with pytest.raises(ValueError):
        downsample(Z, k, 1)


def test_forward_pyramid_shapes_and_range(rng):
    net = _net(levels=4, window=7)
    feats, probs = net.forward_pyramid(rng.normal(size=(2304, 8)))
    assert [len(z) for z in feats] == [2304, 1152, 576, 288, 144]
    assert all(z.shape[1] == 16 for z in feats)
    assert all(p.shape == (len(z), 3) and p.min() >= 0 and p.max() <= 1 for p, z in zip(probs, feats))


def test_shared_decoder_identical_rows(rng):
    net = _net()
    row = rng.normal(size=(1, 16))
    # two zero-padded size-3 convolutions: rows 2 away from either edge see only the constant
    a = net.decode(np.tile(row, (9, 1)))
    b = net.decode(np.tile(row, (5, 1)))
    assert np.allclose(a[2:-2], a[2]) and np.allclose(b[2], a[2])


def test_archive_round_trip(tmp_path):
    net = _net()
    net.save(tmp_path / "w")
    manifest = json.loads((tmp_path / "w.json").read_text())
    assert manifest["dtype"] == "float32" and manifest["endianness"] == "little"
    size = sum(e["count"] for e in manifest["tensors"]) * 4
    assert (tmp_path / "w.bin").stat().st_size == size
    back = TemporalPyramidNet.load(tmp_path / "w")
    assert back.config == net.config
    assert all(np.array_equal(back.weights[k], v) for k, v in net.weights.items())


def test_initialization_is_seeded():
    a, b = _net(), _net()
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    assert all(v.dtype == np.float32 for v in a.weights.values())


def test_config_validation():
    for bad in (dict(window=4), dict(sigma=1), dict(levels=0), dict(d_model=10, heads=4)):
        with pytest.raises(ValueError):
            BackboneConfig(**bad)
