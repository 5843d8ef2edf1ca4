"""Training objective, instance-to-ground-truth matching, and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError, TrainConfig
from .ism import InstancePredictionSet, MASK_THRESHOLD, mean_scores
from .tensor.core import NonFiniteError

P_MIN = 1e-7
P_MAX = 1.0 - 1e-7
MASK_STRIDE = 4


def _focal_terms(p: T.Tensor, target: np.ndarray, alpha: float, gamma: float) -> T.Tensor:
    """Elementwise focal loss; a soft ``target`` in [0, 1] mixes the two branches linearly."""
    p = T.clamp(p, P_MIN, P_MAX)
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape)
    pos = T.power(1.0 - p, gamma) * T.log(p) * (-alpha)
    neg = T.power(p, gamma) * T.log(1.0 - p) * (-(1.0 - alpha))
    return pos * t + neg * (1.0 - t)


def focal_loss(p, target, alpha: float = 0.25, gamma: float = 2.0) -> T.Tensor:
    """Mean focal loss of probabilities ``p`` against ``target`` (same shape)."""
    p = T.as_tensor(p)
    if np.shape(target) != p.shape:
        raise T.ShapeError(f"focal_loss: probabilities {p.shape} vs targets {np.shape(target)}")
    return T.mean(_focal_terms(p, target, alpha, gamma))


def dice_loss(p, target, eps: float = 1.0) -> T.Tensor:
    """``1 - (2 Σ p g + ε) / (Σ p + Σ g + ε)`` over all elements."""
    p = T.as_tensor(p)
    if np.shape(target) != p.shape:
        raise T.ShapeError(f"dice_loss: probabilities {p.shape} vs targets {np.shape(target)}")
    g = np.asarray(target, dtype=np.float64)
    inter = T.sum(p * g)
    return 1.0 - (inter * 2.0 + eps) / (T.sum(p) + (float(g.sum()) + eps))


def kernel_loss(logits, target, alpha: float = 0.25, gamma: float = 2.0) -> T.Tensor:
    """DICE plus pixelwise focal loss (1:1) on mask logits [..., h, w].

    DICE is taken per mask (over the last two axes) and averaged; focal over every pixel.
    """
    logits = T.as_tensor(logits)
    if np.shape(target) != logits.shape:
        raise T.ShapeError(f"kernel_loss: logits {logits.shape} vs targets {np.shape(target)}")
    p = T.sigmoid(logits)
    g = np.asarray(target, dtype=np.float64)
    inter = T.sum(p * g, axis=(-2, -1))
    dice = 1.0 - (inter * 2.0 + 1.0) / (T.sum(p, axis=(-2, -1)) + (g.sum(axis=(-2, -1)) + 1.0))
    return T.mean(dice) + T.mean(_focal_terms(p, g, alpha, gamma))


def downsample_target(masks: np.ndarray, stride: int = MASK_STRIDE, soft: bool = True) -> np.ndarray:
    """Full-resolution binary masks [..., H, W] → targets at [..., H/s, W/s].

    ``soft`` gives the foreground area fraction of each cell; otherwise the
    top-left pixel of each cell (nearest neighbour).
    """
    m = np.asarray(masks, dtype=np.float64)
    h, w = m.shape[-2:]
    if h % stride or w % stride:
        raise ValueError(f"mask extent {(h, w)} not divisible by {stride}")
    if not soft:
        return m[..., ::stride, ::stride].copy()
    cells = m.reshape(*m.shape[:-2], h // stride, stride, w // stride, stride)
    return cells.mean(axis=(-3, -1))


@dataclass(frozen=True)
class GroundTruthSequence:
    """One ground-truth object: per-frame visibility [T] and mask targets [T, h, w]."""

    visible: np.ndarray
    masks: np.ndarray

    @classmethod
    def from_masks(cls, masks: np.ndarray, stride: int = MASK_STRIDE, soft: bool = True) -> "GroundTruthSequence":
        full = np.asarray(masks, dtype=bool)
        # visibility is judged at full resolution so tiny slivers still count
        return cls(full.any(axis=(1, 2)), downsample_target(full, stride, soft))

    @property
    def frames(self) -> int:
        return len(self.visible)


@dataclass(frozen=True)
class Assignment:
    """``pairs`` maps instance index → ground-truth index."""

    pairs: dict
    instances: int

    def targets(self, gts: list[GroundTruthSequence]) -> np.ndarray:
        """Score targets [N, T]: the matched object's visibility, 0 for unmatched instances."""
        out = np.zeros((self.instances, gts[0].frames))
        for i, g in self.pairs.items():
            out[i] = gts[g].visible
        return out


def sequence_iou(logits: np.ndarray, gt: GroundTruthSequence) -> float:
    """IoU over a whole trajectory of binarized instance masks against the object."""
    pred = np.asarray(logits) > MASK_THRESHOLD
    target = gt.masks >= 0.5
    union = np.logical_or(pred, target).sum()
    return 1.0 if union == 0 else float(np.logical_and(pred, target).sum() / union)


def match_for_training(preds: InstancePredictionSet, gts: list[GroundTruthSequence], mode: str,
                       sigma: float = 0.5) -> Assignment:
    n = preds.instances
    means = mean_scores(preds)
    if mode == "single":
        if len(gts) != 1:
            raise ConfigError(f"single-object training needs exactly one ground truth, got {len(gts)}")
        return Assignment({int(np.argmax(means)): 0}, n)
    if mode != "multi":
        raise ConfigError(f"mode must be 'single' or 'multi', got {mode!r}")
    if not gts:
        raise ConfigError("multi-object training needs at least one ground truth")
    if len(gts) > n:
        raise ConfigError(f"{len(gts)} ground-truth objects exceed {n} instance queries")

    confident = [i for i in range(n) if means[i] > sigma]
    candidates = sorted(((sequence_iou(preds.logits[i], gt), i, g)
                         for i in confident for g, gt in enumerate(gts)),
                        key=lambda c: (-c[0], c[1], c[2]))
    pairs: dict[int, int] = {}
    taken: set[int] = set()
    for _, i, g in candidates:
        if i not in pairs and g not in taken:
            pairs[i] = g
            taken.add(g)
    # stable sort keeps the lowest index first among equal scores
    remaining = [i for i in np.argsort(-means, kind="stable") if int(i) not in pairs]
    for g in range(len(gts)):
        if g not in taken:
            pairs[int(remaining.pop(0))] = g
            taken.add(g)
    return Assignment(pairs, n)


@dataclass
class LossBreakdown:
    total: T.Tensor
    cls: T.Tensor
    kernel: T.Tensor
    lambda_cls: float
    lambda_kernel: float

    def as_dict(self) -> dict:
        return {"loss_total": self.total.item(), "loss_cls": self.cls.item(), "loss_kernel": self.kernel.item()}


def total_loss(scores: T.Tensor, logits: T.Tensor, gts: list[GroundTruthSequence], assignment: Assignment,
               cfg: TrainConfig = TrainConfig()) -> LossBreakdown:
    """``scores`` [T, N] and ``logits`` [T, N, h, w] in the network's frame-major layout."""
    target = assignment.targets(gts).T
    l_cls = focal_loss(scores, target, cfg.focal_alpha, cfg.focal_gamma)

    picked, masks = [], []
    for i, g in sorted(assignment.pairs.items()):
        for t in np.flatnonzero(gts[g].visible):
            picked.append(logits[int(t), i])
            masks.append(gts[g].masks[t])
    if picked:
        l_kernel = kernel_loss(T.stack(picked), np.stack(masks), cfg.focal_alpha, cfg.focal_gamma)
    else:
        l_kernel = T.Tensor(0.0)
    total = l_cls * cfg.lambda_cls + l_kernel * cfg.lambda_kernel
    return LossBreakdown(total, l_cls, l_kernel, cfg.lambda_cls, cfg.lambda_kernel)


class Adam:
    """Adam with bias correction and decoupled weight decay (p ← p − lr·wd·p first)."""

    def __init__(self, params: dict[str, T.Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 5e-4):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in {name}; step rejected")
            grads[name] = g
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.asarray(float(self.t))}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["adam.t"])
        for k in self.params:
            self.m[k] = np.array(state[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"adam.v.{k}"], dtype=np.float64)
