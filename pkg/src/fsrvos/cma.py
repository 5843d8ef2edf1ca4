"""Cross-modal affinity: text fusion on both branches, then query self- and cross-affinity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import TextFeatures
from .tensor.nn import LayerNorm, Linear, Module, MultiheadAttention, attention, key_padding_bias

CMA_LEVELS = (1, 2, 3)  # strides 8, 16, 32; the stride-4 level bypasses the module


@dataclass
class FlattenedFeatures:
    """Per-level features of several frames flattened to ``[frames*h*w, C]``."""

    values: T.Tensor
    tag: str  # "support" | "query"
    level: int
    frames: int
    height: int
    width: int

    def __post_init__(self):
        expect = self.frames * self.height * self.width
        if self.values.shape[0] != expect:
            raise ValueError(f"sequence length {self.values.shape[0]} != frames*h*w = {expect}")

    def replace(self, values: T.Tensor) -> "FlattenedFeatures":
        return FlattenedFeatures(values, self.tag, self.level, self.frames, self.height, self.width)

    def unflatten(self) -> T.Tensor:
        c = self.values.shape[-1]
        x = self.values.reshape(self.frames, self.height, self.width, c)
        return x.transpose(0, 3, 1, 2)


def flatten(maps: T.Tensor, tag: str, level: int) -> FlattenedFeatures:
    """``maps`` [frames, C, h, w] → sequence [frames*h*w, C]."""
    f, c, h, w = maps.shape
    seq = maps.transpose(0, 2, 3, 1).reshape(f * h * w, c)
    return FlattenedFeatures(seq, tag, level, f, h, w)


def downsample_mask(masks: np.ndarray, stride: int) -> np.ndarray:
    """Area coverage of ``masks`` [K, H, W] on a grid of ``stride``-sized cells."""
    k, h, w = masks.shape
    return masks.reshape(k, h // stride, stride, w // stride, stride).mean(axis=(2, 4))


class MCAFuse(Module):
    """Visual pixels attend over text tokens; residual add then layer norm."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        self.attn = MultiheadAttention(width, width, width, heads, rng)
        self.norm = LayerNorm(width)

    def __call__(self, f_v: FlattenedFeatures, f_t: TextFeatures) -> FlattenedFeatures:
        if f_v.values.shape[-1] != f_t.tokens.shape[-1]:
            raise ValueError(f"visual width {f_v.values.shape[-1]} != text width {f_t.tokens.shape[-1]}")
        x = f_v.values
        fused = self.attn(x, f_t.tokens, f_t.tokens, key_padding_bias(f_t.valid))
        return f_v.replace(self.norm(x + fused))


class SelfAffinity(Module):
    """``softmax(q_q k_qᵀ / sqrt(d_head)) v_q`` over all query pixels, projected back to C."""

    def __init__(self, width: int, d_head: int, rng: np.random.Generator):
        self.q = Linear(width, d_head, rng)
        self.k = Linear(width, d_head, rng)
        self.v = Linear(width, d_head, rng)
        self.out = Linear(d_head, width, rng)
        self.norm = LayerNorm(width)

    def __call__(self, feats: FlattenedFeatures) -> FlattenedFeatures:
        x = feats.values
        q_s = attention(self.q(x), self.k(x), self.v(x))
        return feats.replace(self.norm(x + self.out(q_s)))


class CrossAffinity(Module):
    """Query features attend over support features carrying the support mask channel."""

    def __init__(self, width: int, d_head: int, rng: np.random.Generator):
        self.q = Linear(width, d_head, rng)
        self.k = Linear(width + 1, d_head, rng)
        self.v = Linear(width + 1, d_head, rng)
        self.out = Linear(d_head, width, rng)
        self.norm = LayerNorm(width)

    def __call__(self, q_s: FlattenedFeatures, support: FlattenedFeatures, mask_column: np.ndarray) -> FlattenedFeatures:
        s = support.values
        if s.shape[-1] != q_s.values.shape[-1]:
            raise ValueError(f"support width {s.shape[-1]} != query width {q_s.values.shape[-1]}")
        s = T.concat([s, T.Tensor(np.asarray(mask_column, dtype=np.float64).reshape(-1, 1))], axis=-1)
        x = q_s.values
        feat = attention(self.q(x), self.k(s), self.v(s))
        return q_s.replace(self.norm(x + self.out(feat)))


class CMALevel(Module):
    def __init__(self, width: int, d_head: int, heads: int, rng: np.random.Generator):
        self.mca = MCAFuse(width, heads, rng)
        self.self_aff = SelfAffinity(width, d_head, rng)
        self.cross_aff = CrossAffinity(width, d_head, rng)


class CrossModalAffinity(Module):
    def __init__(self, width: int, d_head: int, heads: int, rng: np.random.Generator,
                 use_self: bool = True, use_cross: bool = True):
        self.levels = [CMALevel(width, d_head, heads, rng) for _ in CMA_LEVELS]
        self._use_self = use_self
        self._use_cross = use_cross

    def set_ablation(self, use_self: bool = True, use_cross: bool = True) -> None:
        """Bypassed blocks pass their input through unchanged."""
        self._use_self = use_self
        self._use_cross = use_cross

    def __call__(self, support_levels: list[T.Tensor], support_text: TextFeatures, support_masks: np.ndarray,
                 query_levels: list[T.Tensor], query_text: TextFeatures) -> list[T.Tensor]:
        """Fuse the stride-8/16/32 levels; returns query maps [T, C, h, w] per level.

        ``support_masks`` is the binary support target mask [K, H, W] at input resolution.
        """
        h_in = support_masks.shape[1]
        out = []
        for block, lvl in zip(self.levels, CMA_LEVELS):
            f_s = block.mca(flatten(support_levels[lvl], "support", lvl), support_text)
            f_q = block.mca(flatten(query_levels[lvl], "query", lvl), query_text)
            if self._use_self:
                f_q = block.self_aff(f_q)
            if self._use_cross:
                stride = h_in // f_s.height
                f_q = block.cross_aff(f_q, f_s, downsample_mask(support_masks, stride).reshape(-1))
            out.append(f_q.unflatten())
        return out
