"""Instance sequence matching: pick trajectories by their temporal-mean confidence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError

MASK_THRESHOLD = 0.0  # logit 0 == probability 0.5


@dataclass(frozen=True)
class InstancePredictionSet:
    """Per-instance, per-frame scores [N, T] in (0, 1) and mask logits [N, T, h, w]."""

    scores: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores)
        if s.ndim != 2 or np.asarray(self.logits).shape[:2] != s.shape:
            raise ValueError("scores must be [N, T] and logits [N, T, h, w]")
        if np.any(s <= 0.0) or np.any(s >= 1.0):
            raise ValueError("scores must lie strictly inside (0, 1)")

    @property
    def instances(self) -> int:
        return self.scores.shape[0]

    @property
    def frames(self) -> int:
        return self.scores.shape[1]

    @classmethod
    def from_model(cls, scores: np.ndarray, logits: np.ndarray) -> "InstancePredictionSet":
        """Convert the network's frame-major [T, N, ...] layout."""
        return cls(np.asarray(scores).T.copy(), np.swapaxes(np.asarray(logits), 0, 1).copy())


@dataclass(frozen=True)
class SelectionResult:
    mode: str
    idx: tuple[int, ...]
    masks: np.ndarray  # bool [|idx|, T, h, w]
    union: np.ndarray  # bool [T, h, w]


def mean_scores(preds: InstancePredictionSet) -> np.ndarray:
    return np.asarray(preds.scores).mean(axis=1)


def select_single_index(means: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(means))


def select_multi_indices(means: np.ndarray, sigma: float) -> tuple[int, ...]:
    if not 0.0 < sigma < 1.0:
        raise ConfigError(f"sigma must lie in (0, 1), got {sigma}")
    return tuple(int(i) for i in np.flatnonzero(means > sigma))


def assemble_masks(preds: InstancePredictionSet, idx, mode: str) -> SelectionResult:
    logits = np.asarray(preds.logits)
    idx = tuple(idx)
    masks = logits[list(idx)] > MASK_THRESHOLD if idx else np.zeros((0,) + logits.shape[1:], dtype=bool)
    union = masks.any(axis=0) if idx else np.zeros(logits.shape[1:], dtype=bool)
    return SelectionResult(mode, idx, masks, union)


def select_single(preds: InstancePredictionSet) -> SelectionResult:
    return assemble_masks(preds, (select_single_index(mean_scores(preds)),), "single")


def select_multi(preds: InstancePredictionSet, sigma: float = 0.5) -> SelectionResult:
    return assemble_masks(preds, select_multi_indices(mean_scores(preds), sigma), "multi")


def select(preds: InstancePredictionSet, mode: str, sigma: float = 0.5) -> SelectionResult:
    if mode == "single":
        return select_single(preds)
    if mode == "multi":
        return select_multi(preds, sigma)
    raise ValueError(f"mode must be 'single' or 'multi', got {mode!r}")


def select_all(preds: InstancePredictionSet) -> SelectionResult:
    """Every trajectory kept; the no-matching baseline for multi-object ablations."""
    return assemble_masks(preds, tuple(range(preds.instances)), "multi")
