"""End-to-end few-shot referring segmentation network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cma import CrossModalAffinity
from .config import ModelConfig
from .data.episodes import Episode
from .encoders import TextEncoder, TextFeatures, VisualEncoder, Vocabulary, tokenize
from .maskgen import (
    CrossModalFPN,
    KernelHead,
    ReferringHead,
    TransformerDecoder,
    TransformerEncoder,
    dynamic_conv_decode,
    dynamic_param_count,
)
from .tensor.nn import Module


@dataclass
class Predictions:
    scores: T.Tensor  # [T, N] in (0, 1)
    logits: T.Tensor  # [T, N, H/4, W/4]
    embeddings: T.Tensor  # [T, N, C]


class FewShotRVOS(Module):
    """Support/query encoders → CMA → transformer → FPN → kernel and referring heads."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0, vocab: Vocabulary | None = None):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.vocab = vocab or Vocabulary.default()
        c = cfg.width
        self.visual = VisualEncoder(c, rng)
        self.text = TextEncoder(len(self.vocab), cfg.text_dim, c, rng)
        self.cma = CrossModalAffinity(c, cfg.d_head, cfg.mca_heads, rng,
                                      cfg.use_self_affinity, cfg.use_cross_affinity)
        self.enc = TransformerEncoder(c, cfg.heads, cfg.ffn_mult * c, cfg.enc_layers, 3, rng)
        self.dec = TransformerDecoder(c, cfg.heads, cfg.ffn_mult * c, cfg.dec_layers, cfg.queries, rng)
        self.fpn = CrossModalFPN(c, cfg.seg_channels, cfg.d_head, rng)
        self.kernel_head = KernelHead(c, dynamic_param_count(cfg.seg_channels, cfg.dynamic_channels), rng)
        self.ref_head = ReferringHead(c, rng)

    def encode_text(self, expression: str) -> TextFeatures:
        return self.text(tokenize(expression, self.vocab))

    def forward(self, support_frames: np.ndarray, support_masks: np.ndarray, support_expression: str,
                query_frames: np.ndarray, query_expression: str) -> Predictions:
        """Frames are uint8 or float [*, 3, H, W]; ``support_masks`` is binary [K, H, W]."""
        k = support_frames.shape[0]
        frames = np.concatenate([support_frames, query_frames]).astype(np.float64)
        if np.asarray(support_frames).dtype == np.uint8:
            frames /= 255.0
        levels = self.visual(T.Tensor(frames))
        support_levels = [lvl[:k] for lvl in levels]
        query_levels = [lvl[k:] for lvl in levels]

        f_ts = self.encode_text(support_expression)
        f_tq = self.encode_text(query_expression)
        fused = self.cma(support_levels, f_ts, np.asarray(support_masks, dtype=np.float64),
                         query_levels, f_tq)

        memory, mem_pos, layout = self.enc(fused)
        emb = self.dec(memory, mem_pos, f_tq)
        f_seg = self.fpn([query_levels[0], *layout.split(memory)], f_tq)

        kernels = self.kernel_head(emb)
        logits = dynamic_conv_decode(f_seg, kernels, self.dec.reference_points(), self.cfg.dynamic_channels)
        return Predictions(self.ref_head(emb), logits, emb)

    def __call__(self, episode: Episode) -> Predictions:
        return self.forward(episode.support_frames, episode.support_masks, episode.support_expression,
                            episode.query_frames, episode.query_expression)
