"""Forward-only multi-scale temporal transformer in numpy.

Layout::

    X --stem--> block_0 --> Z^0 --down--> block_1 --> Z^1 ... --> Z^L
                              \\                         \\
                            decoder                    decoder   (shared)

Each block is a pre-norm residual windowed multi-head self-attention
followed by a pre-norm residual GELU MLP. Weights are float32 and
initialised from a seeded uniform distribution scaled by ``1/sqrt(fan_in)``;
computation runs in float64.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .io import atomic_write_text


@dataclass(frozen=True)
class BackboneConfig:
    d_in: int = 16
    d_model: int = 32
    d_qk: int = 32
    d_v: int = 32
    heads: int = 4
    window: int = 19
    sigma: int = 2
    levels: int = 4
    mlp_ratio: float = 2.0
    num_classes: int = 3

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if self.sigma < 2:
            raise ValueError("sigma must be >= 2")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        for name in ("d_model", "d_qk", "d_v"):
            if getattr(self, name) % self.heads:
                raise ValueError(f"{name}={getattr(self, name)} is not divisible by heads={self.heads}")
        if min(self.d_in, self.d_model, self.num_classes) < 1 or self.mlp_ratio <= 0:
            raise ValueError("widths, num_classes and mlp_ratio must be positive")

    @property
    def d_hidden(self) -> int:
        return max(1, int(round(self.mlp_ratio * self.d_model)))


# primitive ops

def conv1d(x: np.ndarray, kernel: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Same-length 1D convolution. ``kernel`` has shape ``(k, d_in, d_out)``, k odd."""
    k = kernel.shape[0]
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"input width {x.shape[1]} does not match kernel width {kernel.shape[1]}")
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    out = sum(xp[i:i + len(x)] @ kernel[i].astype(np.float64) for i in range(k))
    if bias is not None:
        out = out + bias
    return out


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def window_softmax_weights(q: np.ndarray, k: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Attention weights of every position over its window.

    Returns ``(weights, valid)`` of shape ``(T, window)``: column ``j`` of
    row ``t`` refers to position ``t - window//2 + j``. Out-of-range
    columns have weight 0 and ``valid`` False.
    """
    T, d = q.shape
    half = window // 2
    kp = np.pad(k, ((half, half), (0, 0)))
    kwin = sliding_window_view(kp, window, axis=0)  # (T, d, window)
    logits = np.einsum("td,tdw->tw", q, kwin) / np.sqrt(d)
    pos = np.arange(T)[:, None] - half + np.arange(window)[None, :]
    valid = (pos >= 0) & (pos < T)
    logits = np.where(valid, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w, valid


def windowed_attention(Z: np.ndarray, weights: dict, window: int, heads: int, prefix: str = "") -> np.ndarray:
    """Multi-head self-attention where position t sees ``[t - w//2, t + w//2]``."""
    p = lambda name: weights[prefix + name].astype(np.float64)  # noqa: E731
    Q, K, V = Z @ p("w_q"), Z @ p("w_k"), Z @ p("w_v")
    T = len(Z)
    half = window // 2
    outs = []
    for qh, kh, vh in zip(np.split(Q, heads, axis=1), np.split(K, heads, axis=1), np.split(V, heads, axis=1)):
        w, _ = window_softmax_weights(qh, kh, window)
        vwin = sliding_window_view(np.pad(vh, ((half, half), (0, 0))), window, axis=0)
        outs.append(np.einsum("tw,tdw->td", w, vwin[:T]))
    return np.concatenate(outs, axis=1) @ p("w_o") + p("b_o")


def dense_attention(Z: np.ndarray, weights: dict, heads: int, prefix: str = "") -> np.ndarray:
    """Unmasked reference attention, O(T^2)."""
    p = lambda name: weights[prefix + name].astype(np.float64)  # noqa: E731
    Q, K, V = Z @ p("w_q"), Z @ p("w_k"), Z @ p("w_v")
    outs = []
    for qh, kh, vh in zip(np.split(Q, heads, axis=1), np.split(K, heads, axis=1), np.split(V, heads, axis=1)):
        s = qh @ kh.T / np.sqrt(qh.shape[1])
        s = np.exp(s - s.max(axis=1, keepdims=True))
        outs.append((s / s.sum(axis=1, keepdims=True)) @ vh)
    return np.concatenate(outs, axis=1) @ p("w_o") + p("b_o")


def downsample(Z: np.ndarray, kernel: np.ndarray, sigma: int) -> np.ndarray:
    """Depthwise kernel-3 convolution with stride ``sigma`` and zero padding 1.

    ``kernel`` has shape ``(3, D)``; output length is ``ceil(T / sigma)``.
    """
    if sigma < 2:
        raise ValueError("sigma must be >= 2")
    T = len(Z)
    n = -(-T // sigma)
    zp = np.pad(Z, ((1, 1 + sigma), (0, 0)))
    k = kernel.astype(np.float64)
    starts = np.arange(n) * sigma
    return sum(zp[starts + i] * k[i] for i in range(3))


# the model

class TemporalPyramidNet:
    """Weights plus the forward pass of the multi-scale transformer."""

    def __init__(self, config: BackboneConfig, weights: dict[str, np.ndarray]):
        self.config = config
        self.weights = weights
        expected = _param_shapes(config)
        missing = set(expected) - set(weights)
        if missing:
            raise ValueError(f"missing weights: {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(weights[name].shape) != shape:
                raise ValueError(f"weight {name} has shape {weights[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, config: BackboneConfig, seed: int = 0) -> "TemporalPyramidNet":
        rng = np.random.default_rng(seed)
        weights = {}
        for name, shape in _param_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("ln") and leaf.endswith("gamma"):
                w = np.ones(shape)
            elif leaf.startswith(("b", "mlp_b")) or leaf.endswith("beta"):
                w = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=shape)
            weights[name] = w.astype(np.float32)
        return cls(config, weights)

    def _w(self, name: str) -> np.ndarray:
        return self.weights[name].astype(np.float64)

    def embed(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.d_in:
            raise ValueError(f"expected features of shape (T, {self.config.d_in}), got {x.shape}")
        if len(x) < 1:
            raise ValueError("need at least one snippet")
        for i in (1, 2):
            x = conv1d(x, self.weights[f"stem.conv{i}"], self._w(f"stem.b{i}"))
            x = relu(layer_norm(x, self._w(f"stem.ln{i}_gamma"), self._w(f"stem.ln{i}_beta")))
        return x

    def block(self, Z: np.ndarray, level: int) -> np.ndarray:
        pre = f"block{level}."
        h = layer_norm(Z, self._w(pre + "ln1_gamma"), self._w(pre + "ln1_beta"))
        Z = Z + windowed_attention(h, self.weights, self.config.window, self.config.heads, prefix=pre)
        h = layer_norm(Z, self._w(pre + "ln2_gamma"), self._w(pre + "ln2_beta"))
        h = gelu(h @ self._w(pre + "mlp_w1") + self._w(pre + "mlp_b1"))
        return Z + h @ self._w(pre + "mlp_w2") + self._w(pre + "mlp_b2")

    def decode(self, Z: np.ndarray) -> np.ndarray:
        h = conv1d(Z, self.weights["dec.conv1"], self._w("dec.b1"))
        h = relu(layer_norm(h, self._w("dec.ln1_gamma"), self._w("dec.ln1_beta")))
        return expit(conv1d(h, self.weights["dec.conv2"], self._w("dec.b2")))

    def forward_features(self, features: np.ndarray) -> list[np.ndarray]:
        Z = self.block(self.embed(features), 0)
        pyramid = [Z]
        for level in range(1, self.config.levels + 1):
            Z = downsample(Z, self.weights[f"down{level}.down"], self.config.sigma)
            Z = self.block(Z, level)
            pyramid.append(Z)
        return pyramid

    def forward_pyramid(self, features: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Pyramid features ``Z^0..Z^L`` and per-level ``T_l x (C+1)`` probabilities."""
        pyramid = self.forward_features(features)
        return pyramid, [self.decode(Z) for Z in pyramid]

    # archive

    def save(self, path) -> None:
        """Write ``<path>.bin`` (little-endian float32) and ``<path>.json`` (manifest)."""
        path = Path(path)
        blobs, entries, offset = [], [], 0
        for name in sorted(self.weights):
            arr = np.ascontiguousarray(self.weights[name], dtype="<f4")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
        bin_path = path.with_suffix(".bin")
        bin_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = bin_path.with_suffix(".bin.tmp")
        tmp.write_bytes(b"".join(blobs))
        tmp.replace(bin_path)
        manifest = {"format": "potloc-weights", "version": 1, "dtype": "float32", "endianness": "little",
                    "config": asdict(self.config), "tensors": entries}
        atomic_write_text(path.with_suffix(".json"), json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TemporalPyramidNet":
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        blob = path.with_suffix(".bin").read_bytes()
        weights = {}
        for entry in manifest["tensors"]:
            arr = np.frombuffer(blob, dtype="<f4", count=entry["count"], offset=entry["offset"])
            weights[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        return cls(BackboneConfig(**manifest["config"]), weights)


def _param_shapes(c: BackboneConfig) -> dict[str, tuple[int, ...]]:
    D, C1 = c.d_model, c.num_classes + 1
    shapes: dict[str, tuple[int, ...]] = {
        "stem.conv1": (3, c.d_in, D), "stem.b1": (D,),
        "stem.ln1_gamma": (D,), "stem.ln1_beta": (D,),
        "stem.conv2": (3, D, D), "stem.b2": (D,),
        "stem.ln2_gamma": (D,), "stem.ln2_beta": (D,),
        "dec.conv1": (3, D, D), "dec.b1": (D,),
        "dec.ln1_gamma": (D,), "dec.ln1_beta": (D,),
        "dec.conv2": (3, D, C1), "dec.b2": (C1,),
    }
    for level in range(c.levels + 1):
        pre = f"block{level}."
        shapes.update({
            pre + "ln1_gamma": (D,), pre + "ln1_beta": (D,),
            pre + "w_q": (D, c.d_qk), pre + "w_k": (D, c.d_qk), pre + "w_v": (D, c.d_v),
            pre + "w_o": (c.d_v, D), pre + "b_o": (D,),
            pre + "ln2_gamma": (D,), pre + "ln2_beta": (D,),
            pre + "mlp_w1": (D, c.d_hidden), pre + "mlp_b1": (c.d_hidden,),
            pre + "mlp_w2": (c.d_hidden, D), pre + "mlp_b2": (D,),
        })
        if level > 0:
            shapes[f"down{level}.down"] = (3, D)
    return shapes
