import numpy as np
import pytest

from fsrvos.config import ModelConfig, RunConfig
from fsrvos.data import SceneConfig, plan_folds, sample_episode

TINY_MODEL = dict(width=16, seg_channels=4, d_head=16, queries=3, enc_layers=1, dec_layers=1,
                  heads=2, mca_heads=2, ffn_mult=2, text_dim=8)
TINY_SCENE = SceneConfig(height=32, width=32, size_range=(8.0, 12.0), max_speed=1.0)


def tiny_model_config(**kw) -> ModelConfig:
    return ModelConfig(**{**TINY_MODEL, **kw})


def tiny_run_config(**flat) -> RunConfig:
    cfg = RunConfig(model=tiny_model_config())
    cfg.data.height = cfg.data.width = 32
    cfg.train.shots = 2
    cfg.train.frames = 2
    cfg.update(flat)
    return cfg


def tiny_episode(seed=0, mode="single", shots=2, frames=2, split="train"):
    return sample_episode(plan_folds(), 1, split, mode, seed, TINY_SCENE, shots=shots, query_frames=frames)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
