"""Trainable toy encoders: a 4-level convolutional pyramid and a one-block text encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data.language import PAD, UNK, vocabulary
from .tensor.nn import Conv2d, LayerNorm, Linear, Module, MultiheadAttention, key_padding_bias, parameter

PAD_ID, UNK_ID = 0, 1
STRIDES = (4, 8, 16, 32)


class Vocabulary:
    """Word ↔ id table; line number in the vocabulary file is the id."""

    def __init__(self, words: list[str]):
        if words[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with PAD and UNK")
        self.words = list(words)
        self.ids = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(vocabulary())

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray  # int64 [length]
    valid: np.ndarray  # bool [length], False at padding

    def __len__(self) -> int:
        return len(self.ids)

    def padded(self, length: int) -> "TokenSequence":
        extra = length - len(self.ids)
        if extra < 0:
            raise ValueError("cannot pad to a shorter length")
        return TokenSequence(np.concatenate([self.ids, np.full(extra, PAD_ID)]),
                             np.concatenate([self.valid, np.zeros(extra, dtype=bool)]))


def tokenize(expression: str, vocab: Vocabulary | None = None) -> TokenSequence:
    vocab = vocab or Vocabulary.default()
    words = expression.lower().split()
    if not words:
        raise ValueError("empty referring expression")
    ids = np.array([vocab.ids.get(w, UNK_ID) for w in words], dtype=np.int64)
    return TokenSequence(ids, np.ones(len(ids), dtype=bool))


@dataclass
class TextFeatures:
    tokens: T.Tensor  # [L, C]
    pooled: T.Tensor  # [C]
    valid: np.ndarray  # bool [L]


def sinusoidal_1d(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / (10000.0 ** (2 * i / dim))
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def sinusoidal_2d(h: int, w: int, dim: int) -> np.ndarray:
    """[h*w, dim]: first half encodes rows, second half columns."""
    half = dim // 2
    rows = sinusoidal_1d(h, half)
    cols = sinusoidal_1d(w, dim - half)
    return np.concatenate([np.repeat(rows, w, axis=0), np.tile(cols, (h, 1))], axis=1)


class TextEncoder(Module):
    """Token embedding + fixed positions + one single-head attention block + projection to C."""

    def __init__(self, vocab_size: int, dim: int, width: int, rng: np.random.Generator):
        self.embed = parameter(rng.normal(0.0, 1.0, size=(vocab_size, dim)))
        self.attn = MultiheadAttention(dim, dim, dim, 1, rng)
        self.norm = LayerNorm(dim)
        self.proj = Linear(dim, width, rng)
        self.out_norm = LayerNorm(width)

    def __call__(self, tokens: TokenSequence) -> TextFeatures:
        x = T.embedding(self.embed, tokens.ids) + T.Tensor(sinusoidal_1d(len(tokens), self.embed.shape[1]))
        bias = key_padding_bias(tokens.valid)
        x = self.norm(x + self.attn(x, x, x, bias))
        feats = self.out_norm(self.proj(x))
        keep = np.flatnonzero(tokens.valid)
        pooled = T.mean(feats[keep], axis=0)
        return TextFeatures(feats, pooled, tokens.valid.copy())


class VisualEncoder(Module):
    """Stem (stride 2) then four stages of [3×3 conv → relu → stride-2 3×3 conv].

    Stage outputs are the pyramid levels at strides 4, 8, 16 and 32.
    """

    def __init__(self, width: int, rng: np.random.Generator, in_channels: int = 3):
        self.stem = Conv2d(in_channels, width, 3, rng, stride=2)
        self.stages = [
            _Stage(Conv2d(width, width, 3, rng), Conv2d(width, width, 3, rng, stride=2))
            for _ in range(4)
        ]

    def __call__(self, frames: T.Tensor) -> list[T.Tensor]:
        """``frames`` [B, 3, H, W] in [0, 1] → four maps [B, C, H/s, W/s]."""
        _, _, h, w = frames.shape
        if h % 32 or w % 32:
            raise ValueError(f"frame extents {h}x{w} must be divisible by 32")
        x = T.relu(self.stem(frames - 0.5))
        levels = []
        for stage in self.stages:
            x = stage.down(T.relu(stage.conv(x)))
            levels.append(x)
            x = T.relu(x)
        return levels


class _Stage(Module):
    def __init__(self, conv, down):
        self.conv = conv
        self.down = down


def pyramid_shapes(h: int, w: int) -> list[tuple[int, int]]:
    return [(math.ceil(h / s), math.ceil(w / s)) for s in STRIDES]
