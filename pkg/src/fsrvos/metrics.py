"""Region similarity J, contour accuracy F, and episode/fold aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tensor.ops import _interp_matrix

_CROSS = ndimage.generate_binary_structure(2, 1)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def region_similarity(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background or outside the image."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _CROSS, border_value=0)


def contour_accuracy(pred, gt, tolerance: int = 1) -> float:
    pred, gt = _pair(pred, gt)
    bp, bg = boundary(pred), boundary(gt)
    n_p, n_g = int(bp.sum()), int(bg.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    square = np.ones((2 * tolerance + 1,) * 2, dtype=bool)
    near_g = ndimage.binary_dilation(bg, square) if tolerance > 0 else bg
    near_p = ndimage.binary_dilation(bp, square) if tolerance > 0 else bp
    precision = (bp & near_g).sum() / n_p
    recall = (bg & near_p).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def episode_score(pred_masks, gt_masks, tolerance: int = 1) -> tuple[float, float]:
    """Frame-averaged (J, F) of binary masks [T, H, W]."""
    pred_masks = np.asarray(pred_masks, dtype=bool)
    gt_masks = np.asarray(gt_masks, dtype=bool)
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"frame counts differ: {len(pred_masks)} vs {len(gt_masks)}")
    if len(pred_masks) == 0:
        raise ValueError("episode has no frames")
    js = [region_similarity(p, g) for p, g in zip(pred_masks, gt_masks)]
    fs = [contour_accuracy(p, g, tolerance) for p, g in zip(pred_masks, gt_masks)]
    return float(np.mean(js)), float(np.mean(fs))


def upsample_logits(logits: np.ndarray, factor: int = 4, mode: str = "bilinear") -> np.ndarray:
    """Mask logits [..., h, w] → [..., h·factor, w·factor] for scoring at input resolution."""
    logits = np.asarray(logits, dtype=np.float64)
    if mode == "nearest":
        return logits.repeat(factor, axis=-2).repeat(factor, axis=-1)
    if mode != "bilinear":
        raise ValueError(f"unknown upsampling mode {mode!r}")
    uh = _interp_matrix(logits.shape[-2], factor)
    uw = _interp_matrix(logits.shape[-1], factor)
    return uh @ logits @ uw.T


@dataclass
class EpisodeResult:
    id: str
    cls: str
    J: float
    F: float

    @property
    def JF(self) -> float:
        return 0.5 * (self.J + self.F)


@dataclass
class EvalReport:
    fold: int
    seed: int
    config_hash: str
    episodes: list[EpisodeResult] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def mean_J(self) -> float:
        return float(np.mean([e.J for e in self.episodes])) if self.episodes else 0.0

    @property
    def mean_F(self) -> float:
        return float(np.mean([e.F for e in self.episodes])) if self.episodes else 0.0

    @property
    def mean_JF(self) -> float:
        return 0.5 * (self.mean_J + self.mean_F)

    def to_dict(self) -> dict:
        eps = sorted(self.episodes, key=lambda e: e.id)
        return {
            "fold": self.fold,
            "episodes": [{"id": e.id, "class": e.cls, "J": e.J, "F": e.F} for e in eps],
            "mean_J": self.mean_J,
            "mean_F": self.mean_F,
            "mean_JF": self.mean_JF,
            "seed": self.seed,
            "config_hash": self.config_hash,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        known = {"fold", "episodes", "mean_J", "mean_F", "mean_JF", "seed", "config_hash"}
        eps = [EpisodeResult(e["id"], e["class"], e["J"], e["F"]) for e in d["episodes"]]
        return cls(d["fold"], d["seed"], d["config_hash"], eps, {k: v for k, v in d.items() if k not in known})

