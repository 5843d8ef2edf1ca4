"""Random scene generation and few-shot episode sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .folds import FoldPlan
from .language import AmbiguousTargetError, generate_expression
from .shapes import CLASSES, COLORS, ObjectSpec, SceneError, SceneSpec, render_scene

_SPLITS = {"train": 0, "test": 1}
_MODES = {"single": 0, "multi": 1}


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    size_range: tuple[float, float] = (18.0, 28.0)
    max_speed: float = 2.0
    distractors: tuple[int, int] = (1, 2)
    same_class_distractor_prob: float = 0.25
    same_color_distractor_prob: float = 0.25
    multi_targets: tuple[int, int] = (2, 3)
    min_visible_fraction: float = 0.3
    motion_phrase_prob: float = 0.3


@dataclass
class RenderedScene:
    scene_id: str
    class_name: str
    mode: str
    spec: SceneSpec
    expression: str
    frames: np.ndarray  # uint8 [T, 3, H, W]
    masks: np.ndarray  # bool [n_objects, T, H, W]

    @property
    def target_masks(self) -> np.ndarray:
        return self.masks[list(self.spec.targets)]


@dataclass
class Episode:
    """One few-shot task: K annotated support frames and a T-frame query clip."""

    class_name: str
    mode: str
    support_frames: np.ndarray  # uint8 [K, 3, H, W]
    support_masks: np.ndarray  # bool [K, H, W], union of support targets
    support_expression: str
    query_frames: np.ndarray  # uint8 [T, 3, H, W]
    query_expression: str
    query_masks: np.ndarray  # bool [G, T, H, W], one sequence per target object
    support_scene_id: str
    query_scene_id: str

    @property
    def shots(self) -> int:
        return self.support_frames.shape[0]

    @property
    def frames(self) -> int:
        return self.query_frames.shape[0]

    @property
    def query_union(self) -> np.ndarray:
        return self.query_masks.any(axis=0)


def _random_object(shape: str, color: str, rng: np.random.Generator, cfg: SceneConfig, frames: int) -> ObjectSpec:
    size = float(rng.uniform(*cfg.size_range))
    speed = rng.uniform(-cfg.max_speed, cfg.max_speed, size=2)
    margin = size / 2.0
    span = speed * (frames - 1)
    lo = margin - np.minimum(span, 0.0)
    hi = np.array([cfg.width, cfg.height]) - margin - np.maximum(span, 0.0)
    if np.any(hi <= lo):
        speed = np.zeros(2)
        lo, hi = np.full(2, margin), np.array([cfg.width, cfg.height]) - margin
    start = rng.uniform(lo, hi)
    return ObjectSpec(shape, color, round(size, 3), (round(float(speed[0]), 3), round(float(speed[1]), 3)),
                      (round(float(start[0]), 3), round(float(start[1]), 3)))


def random_scene(class_name: str, mode: str, rng: np.random.Generator, cfg: SceneConfig = SceneConfig(),
                 frame_count: int = 8, scene_id: str = "scene", max_attempts: int = 200) -> RenderedScene:
    """Draw a scene whose target(s) belong to ``class_name`` and are uniquely describable."""
    if mode not in _MODES:
        raise ValueError(f"mode must be 'single' or 'multi', got {mode!r}")
    colors = list(COLORS)
    others = [c for c in CLASSES if c != class_name]
    for _ in range(max_attempts):
        color = colors[rng.integers(len(colors))]
        n_targets = 1 if mode == "single" else int(rng.integers(cfg.multi_targets[0], cfg.multi_targets[1] + 1))
        objs = [_random_object(class_name, color, rng, cfg, frame_count) for _ in range(n_targets)]
        for _ in range(int(rng.integers(cfg.distractors[0], cfg.distractors[1] + 1))):
            u = rng.random()
            other_colors = [c for c in colors if c != color]
            if u < cfg.same_class_distractor_prob:
                shape, dcolor = class_name, other_colors[rng.integers(len(other_colors))]
            elif u < cfg.same_class_distractor_prob + cfg.same_color_distractor_prob:
                shape, dcolor = others[rng.integers(len(others))], color
            else:
                shape = others[rng.integers(len(others))]
                dcolor = other_colors[rng.integers(len(other_colors))]
            objs.append(_random_object(shape, dcolor, rng, cfg, frame_count))
        order = rng.permutation(len(objs))
        objs = [objs[i] for i in order]
        targets = tuple(sorted(int(np.flatnonzero(order == i)[0]) for i in range(n_targets)))
        spec = SceneSpec(cfg.height, cfg.width, tuple(objs), frame_count,
                         int(rng.integers(2**31)), True, targets)
        try:
            expression = generate_expression(spec, targets, mention_motion=rng.random() < cfg.motion_phrase_prob)
            frames, masks = render_scene(spec)
        except (AmbiguousTargetError, SceneError):
            continue
        unoccluded = SceneSpec(spec.height, spec.width, spec.objects, frame_count, 0, False, targets)
        full = render_scene(unoccluded)[1]
        visible = masks[list(targets)].sum(axis=(2, 3)) / np.maximum(full[list(targets)].sum(axis=(2, 3)), 1)
        if visible.min() < cfg.min_visible_fraction:
            continue
        return RenderedScene(scene_id, class_name, mode, spec, expression, frames, masks)
    raise SceneError(f"could not draw an unambiguous {mode} scene of class {class_name}")


def episode_from_scenes(support: RenderedScene, query: RenderedScene, shots: int = 5,
                        query_frames: int | None = None, support_start: int = 0) -> Episode:
    if support.scene_id == query.scene_id:
        raise ValueError("support and query must come from different scenes")
    if support.class_name != query.class_name:
        raise ValueError("support and query targets must share one class")
    t = query.frames.shape[0] if query_frames is None else query_frames
    sl = slice(support_start, support_start + shots)
    if support.frames[sl].shape[0] != shots or query.frames.shape[0] < t:
        raise ValueError("scene too short for the requested shots / query length")
    return Episode(
        class_name=query.class_name,
        mode=query.mode,
        support_frames=support.frames[sl],
        support_masks=support.target_masks[:, sl].any(axis=0),
        support_expression=support.expression,
        query_frames=query.frames[:t],
        query_expression=query.expression,
        query_masks=query.target_masks[:, :t],
        support_scene_id=support.scene_id,
        query_scene_id=query.scene_id,
    )


def sample_episode(plan: FoldPlan, fold: int, split: str, mode: str, seed: int,
                   cfg: SceneConfig = SceneConfig(), shots: int = 5, query_frames: int = 8) -> Episode:
    """Deterministic episode for ``(fold, split, mode, seed)``.

    The class cycles with the seed so consecutive seeds visit the split's classes
    equally often.
    """
    classes = plan.classes(fold, split)
    if not classes:
        raise ValueError(f"fold {fold} has no {split} classes")
    class_name = classes[seed % len(classes)]
    rng = np.random.default_rng([seed, fold, _SPLITS[split], _MODES[mode]])
    tag = f"{split}-f{fold}-{mode}-{seed}"
    support = random_scene(class_name, mode, rng, cfg, frame_count=shots, scene_id=f"{tag}-support")
    query = random_scene(class_name, mode, rng, cfg, frame_count=query_frames, scene_id=f"{tag}-query")
    return episode_from_scenes(support, query, shots=shots, query_frames=query_frames)
