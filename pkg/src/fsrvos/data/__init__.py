"""Synthetic moving-shapes benchmark: scenes, expressions, folds and episodes."""

from .corpus import Corpus, generate_corpus, load_frames, load_scene, read_pgm, save_scene, write_pgm
from .episodes import Episode, RenderedScene, SceneConfig, episode_from_scenes, random_scene, sample_episode
from .folds import Fold, FoldPlan, FoldPlanError, plan_folds
from .language import AmbiguousTargetError, generate_expression, vocabulary
from .shapes import CLASSES, COLORS, ObjectSpec, SceneError, SceneSpec, render_scene

__all__ = [name for name in dir() if not name.startswith("_")]
