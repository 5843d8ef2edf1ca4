"""Transformer, text-aware feature pyramid, and dynamic-convolution mask decoding."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .encoders import TextFeatures, sinusoidal_2d
from .tensor.nn import Conv2d, FeedForward, LayerNorm, Linear, Module, MultiheadAttention, attention, key_padding_bias, parameter


def dynamic_param_count(seg_channels: int, hidden: int = 8) -> int:
    """Weights and biases of the conv plan (C_seg+2) → hidden → hidden → 1."""
    c_in = seg_channels + 2
    return c_in * hidden + hidden + hidden * hidden + hidden + hidden * 1 + 1


class EncoderLayer(Module):
    def __init__(self, width: int, heads: int, ffn: int, rng: np.random.Generator):
        self.attn = MultiheadAttention(width, width, width, heads, rng)
        self.norm1 = LayerNorm(width)
        self.ffn = FeedForward(width, ffn, rng)
        self.norm2 = LayerNorm(width)

    def __call__(self, x: T.Tensor, pos: T.Tensor) -> T.Tensor:
        qk = x + pos
        x = self.norm1(x + self.attn(qk, qk, x))
        return self.norm2(x + self.ffn(x))


class DecoderLayer(Module):
    def __init__(self, width: int, heads: int, ffn: int, rng: np.random.Generator):
        self.self_attn = MultiheadAttention(width, width, width, heads, rng)
        self.norm1 = LayerNorm(width)
        self.cross_attn = MultiheadAttention(width, width, width, heads, rng)
        self.norm2 = LayerNorm(width)
        self.ffn = FeedForward(width, ffn, rng)
        self.norm3 = LayerNorm(width)

    def __call__(self, tgt: T.Tensor, query_pos: T.Tensor, memory: T.Tensor, mem_pos: T.Tensor) -> T.Tensor:
        qk = tgt + query_pos
        tgt = self.norm1(tgt + self.self_attn(qk, qk, tgt))
        tgt = self.norm2(tgt + self.cross_attn(tgt + query_pos, memory + mem_pos, memory))
        return self.norm3(tgt + self.ffn(tgt))


class LevelLayout:
    """Offsets of each level's tokens inside the concatenated encoder sequence."""

    def __init__(self, shapes: list[tuple[int, int]]):
        self.shapes = list(shapes)
        sizes = [h * w for h, w in self.shapes]
        self.offsets = [0, *np.cumsum(sizes)[:-1].tolist()]
        self.total = int(sum(sizes))

    def split(self, memory: T.Tensor) -> list[T.Tensor]:
        """[frames, S, C] → maps [frames, C, h, w] per level."""
        f, _, c = memory.shape
        maps = []
        for (h, w), off in zip(self.shapes, self.offsets):
            seq = memory[:, off:off + h * w, :]
            maps.append(seq.reshape(f, h, w, c).transpose(0, 3, 1, 2))
        return maps


class TransformerEncoder(Module):
    """Self-attention over the concatenated stride-8/16/32 tokens of each frame independently."""

    def __init__(self, width: int, heads: int, ffn: int, layers: int, levels: int, rng: np.random.Generator):
        self.layers = [EncoderLayer(width, heads, ffn, rng) for _ in range(layers)]
        self.level_embed = parameter(rng.normal(0.0, 0.1, size=(levels, width)))

    def positions(self, layout: LevelLayout) -> T.Tensor:
        c = self.level_embed.shape[1]
        parts = [T.Tensor(sinusoidal_2d(h, w, c)) + self.level_embed[i] for i, (h, w) in enumerate(layout.shapes)]
        return T.concat(parts, axis=0)

    def __call__(self, maps: list[T.Tensor]) -> tuple[T.Tensor, T.Tensor, LevelLayout]:
        layout = LevelLayout([m.shape[2:] for m in maps])
        x = T.concat([m.transpose(0, 2, 3, 1).reshape(m.shape[0], -1, m.shape[1]) for m in maps], axis=1)
        pos = self.positions(layout)
        for layer in self.layers:
            x = layer(x, pos)
        return x, pos, layout


class TransformerDecoder(Module):
    """N instance queries, shared across frames, conditioned on the pooled query sentence."""

    def __init__(self, width: int, heads: int, ffn: int, layers: int, queries: int, rng: np.random.Generator):
        self.query_embed = parameter(rng.normal(0.0, 1.0, size=(queries, width)))
        self.ref_points = parameter(rng.uniform(0.2, 0.8, size=(queries, 2)))
        self.layers = [DecoderLayer(width, heads, ffn, rng) for _ in range(layers)]

    def reference_points(self) -> T.Tensor:
        return T.clamp(self.ref_points, 0.0, 1.0)

    def __call__(self, memory: T.Tensor, mem_pos: T.Tensor, text: TextFeatures) -> T.Tensor:
        frames = memory.shape[0]
        n, c = self.query_embed.shape
        tgt = T.broadcast_to(self.query_embed + text.pooled, (frames, n, c))
        for layer in self.layers:
            tgt = layer(tgt, self.query_embed, memory, mem_pos)
        return tgt


class FPNLevel(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.lateral = Conv2d(width, width, 1, rng)
        self.text_proj = Linear(width, width, rng)


class CrossModalFPN(Module):
    """Per-level text cross-attention, top-down upsample-and-sum, then a 3×3 conv to C_seg."""

    def __init__(self, width: int, seg_channels: int, d_head: int, rng: np.random.Generator, levels: int = 4):
        self.levels = [FPNLevel(width, rng) for _ in range(levels)]
        self.smooth = [Conv2d(width, width, 3, rng) for _ in range(levels - 1)]
        self.out = Conv2d(width, seg_channels, 3, rng)
        self._d_head = d_head

    def cross(self, f_v: T.Tensor, text: TextFeatures, level: int) -> T.Tensor:
        """``f_v + softmax(f_v tᵀ / sqrt(d_head)) t`` on maps [frames, C, h, w]."""
        f, c, h, w = f_v.shape
        seq = f_v.transpose(0, 2, 3, 1).reshape(f, h * w, c)
        t = self.levels[level].text_proj(text.tokens)
        attended = attention(seq, t, t, key_padding_bias(text.valid), scale_dim=self._d_head)
        return (seq + attended).reshape(f, h, w, c).transpose(0, 3, 1, 2)

    def __call__(self, maps: list[T.Tensor], text: TextFeatures) -> T.Tensor:
        """``maps`` at strides 4, 8, 16, 32 → F_seg [frames, C_seg, H/4, W/4]."""
        fused = [self.cross(self.levels[i].lateral(m), text, i) for i, m in enumerate(maps)]
        p = fused[-1]
        for i in range(len(fused) - 2, -1, -1):
            p = T.relu(self.smooth[i](fused[i] + T.bilinear_upsample(p, 2)))
        return self.out(p)


class KernelHead(Module):
    def __init__(self, width: int, n_params: int, rng: np.random.Generator):
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)
        self.fc3 = Linear(width, n_params, rng)

    def __call__(self, emb: T.Tensor) -> T.Tensor:
        return self.fc3(T.relu(self.fc2(T.relu(self.fc1(emb)))))


class ReferringHead(Module):
    def __init__(self, width: int, rng: np.random.Generator, prior: float = 0.1):
        self.fc = Linear(width, 1, rng)
        self.fc.bias.data[:] = -math.log((1 - prior) / prior)

    def __call__(self, emb: T.Tensor) -> T.Tensor:
        """Confidence scores in (0, 1), shape [frames, N]."""
        logits = self.fc(emb)
        return T.sigmoid(logits.reshape(*logits.shape[:-1]))


def coordinate_grid(h: int, w: int) -> np.ndarray:
    """Pixel-centre coordinates in [0, 1]: rows are (x, y), shape [2, h*w]."""
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([(xs.reshape(-1) + 0.5) / w, (ys.reshape(-1) + 0.5) / h])


def dynamic_conv_decode(f_seg: T.Tensor, kernels: T.Tensor, ref_points: T.Tensor, hidden: int = 8) -> T.Tensor:
    """Apply per-instance 1×1 conv stacks to F_seg plus relative coordinates.

    ``f_seg`` [frames, C_seg, h, w]; ``kernels`` [frames, N, P]; ``ref_points`` [N, 2].
    Returns mask logits [frames, N, h, w].
    """
    f, c, h, w = f_seg.shape
    _, n, p = kernels.shape
    if p != dynamic_param_count(c, hidden):
        raise ValueError(f"kernel length {p} != expected {dynamic_param_count(c, hidden)} for C_seg={c}")
    grid = T.Tensor(coordinate_grid(h, w)[None])  # [1, 2, P]
    rel = grid - T.reshape(ref_points, (n, 2, 1))  # [N, 2, P]
    feats = T.broadcast_to(f_seg.reshape(f, 1, c, h * w), (f, n, c, h * w))
    x = T.concat([feats, T.broadcast_to(rel, (f, n, 2, h * w))], axis=2)

    c_in = c + 2
    sizes = [c_in * hidden, hidden, hidden * hidden, hidden, hidden, 1]
    shapes = [(hidden, c_in), (hidden, 1), (hidden, hidden), (hidden, 1), (1, hidden), (1, 1)]
    parts, off = [], 0
    for size, shape in zip(sizes, shapes):
        parts.append(kernels[:, :, off:off + size].reshape(f, n, *shape))
        off += size
    w1, b1, w2, b2, w3, b3 = parts
    x = T.relu(w1 @ x + b1)
    x = T.relu(w2 @ x + b2)
    x = w3 @ x + b3
    return x.reshape(f, n, h, w)
