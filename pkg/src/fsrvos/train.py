"""Episodic training, evaluation, checkpointing and baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .config import ConfigError, RunConfig
from .data import FoldPlan, SceneConfig, plan_folds, sample_episode
from .data.episodes import Episode
from .ism import InstancePredictionSet, SelectionResult, select, select_all
from .metrics import EpisodeResult, EvalReport, episode_score, upsample_logits
from .model import FewShotRVOS
from .objective import Adam, GroundTruthSequence, LossBreakdown, match_for_training, total_loss
from .tensor.checkpoint import load_tensors, save_tensors
from .tensor.core import NonFiniteError

MASK_STRIDE = 4


def ground_truth(episode: Episode, soft: bool = True) -> list[GroundTruthSequence]:
    return [GroundTruthSequence.from_masks(m, MASK_STRIDE, soft) for m in episode.query_masks]


def scene_config(cfg: RunConfig) -> SceneConfig:
    """Generator settings at the configured resolution; object sizes shrink with the frame."""
    base = SceneConfig()
    if (cfg.data.height, cfg.data.width) == (base.height, base.width):
        return base
    scale = min(cfg.data.height, cfg.data.width) / min(base.height, base.width)
    lo, hi = base.size_range
    return replace(base, height=cfg.data.height, width=cfg.data.width, size_range=(lo * scale, hi * scale),
                   max_speed=base.max_speed * scale)


def build_model(cfg: RunConfig) -> FewShotRVOS:
    return FewShotRVOS(cfg.model, seed=cfg.seed)


def make_optimizer(model: FewShotRVOS, cfg: RunConfig) -> Adam:
    t = cfg.train
    return Adam(dict(model.named_parameters()), t.lr, (t.beta1, t.beta2), t.eps, t.weight_decay)


def train_step(model: FewShotRVOS, opt: Adam, episode: Episode, cfg: RunConfig) -> LossBreakdown:
    """One forward/backward/update on a fresh tape."""
    with T.tape_scope():
        preds = model(episode)
        ps = InstancePredictionSet.from_model(preds.scores.data, preds.logits.data)
        gts = ground_truth(episode, cfg.train.soft_mask_targets)
        assignment = match_for_training(ps, gts, episode.mode, cfg.train.sigma)
        loss = total_loss(preds.scores, preds.logits, gts, assignment, cfg.train)
        if not np.isfinite(loss.total.item()):
            raise NonFiniteError(f"non-finite loss {loss.total.item()}")
        opt.zero_grad()
        T.backward(loss.total)
    opt.step()
    return loss


@dataclass
class EpisodePrediction:
    selection: SelectionResult  # at input resolution
    scores: np.ndarray  # [N, T]


def predict(model: FewShotRVOS, episode: Episode, mode: str, sigma: float = 0.5,
            upsample: str = "bilinear", all_instances: bool = False) -> EpisodePrediction:
    with T.no_grad():
        preds = model(episode)
    logits = upsample_logits(preds.logits.data, MASK_STRIDE, upsample)
    ps = InstancePredictionSet.from_model(preds.scores.data, logits)
    sel = select_all(ps) if all_instances else select(ps, mode, sigma)
    return EpisodePrediction(sel, ps.scores)


def score_episode(model: FewShotRVOS, episode: Episode, cfg: RunConfig, sigma: float | None = None,
                  all_instances: bool = False) -> tuple[float, float]:
    sigma = cfg.train.sigma if sigma is None else sigma
    pred = predict(model, episode, episode.mode, sigma, cfg.data.eval_upsample, all_instances)
    return episode_score(pred.selection.union, episode.query_union, cfg.data.boundary_tolerance)


def held_out_episodes(cfg: RunConfig, tests: int, seed: int, plan: FoldPlan | None = None) -> Iterator[Episode]:
    """The seeded held-out episodes: one per test index, classes cycled by seed."""
    plan = plan or plan_folds(n_folds=cfg.data.folds, seed=cfg.data.fold_seed)
    for i in range(tests):
        yield sample_episode(plan, cfg.data.fold, "test", cfg.mode, seed * 1000 + i, scene_config(cfg),
                             shots=cfg.train.shots, query_frames=cfg.train.frames)


def evaluate(model: FewShotRVOS, cfg: RunConfig, tests: int = 5, seed: int | None = None,
             sigma: float | None = None, all_instances: bool = False,
             episodes: list[Episode] | None = None) -> EvalReport:
    seed = cfg.seed if seed is None else seed
    episodes = list(held_out_episodes(cfg, tests, seed)) if episodes is None else episodes
    report = EvalReport(cfg.data.fold, seed, cfg.content_hash())
    for i, ep in enumerate(episodes):
        j, f = score_episode(model, ep, cfg, sigma, all_instances)
        report.episodes.append(EpisodeResult(f"{i:04d}", ep.class_name, j, f))
    return report


def copy_support_baseline(cfg: RunConfig, episodes: list[Episode], seed: int = 0) -> EvalReport:
    """Predict the last support mask for every query frame."""
    report = EvalReport(cfg.data.fold, seed, cfg.content_hash(), extra={"method": "copy_last_support_mask"})
    for i, ep in enumerate(episodes):
        pred = np.broadcast_to(ep.support_masks[-1], ep.query_union.shape)
        j, f = episode_score(pred, ep.query_union, cfg.data.boundary_tolerance)
        report.episodes.append(EpisodeResult(f"{i:04d}", ep.class_name, j, f))
    return report


def save_checkpoint(path: str | Path, model: FewShotRVOS, opt: Adam | None, cfg: RunConfig, step: int) -> None:
    path = Path(path)
    tensors = dict(model.state_dict())
    if opt is not None:
        tensors.update(opt.state_dict())
    save_tensors(path, tensors)
    meta = {"config": cfg.to_flat(), "config_hash": cfg.content_hash(), "step": step}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path, overrides: dict | None = None) -> tuple[FewShotRVOS, Adam, RunConfig, int]:
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".json")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint metadata {meta_path}: {exc}") from exc
    cfg = RunConfig.from_flat(meta["config"])
    if overrides:
        cfg.update(overrides)
    cfg.validate()
    tensors = load_tensors(path)
    model = build_model(cfg)
    try:
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint does not fit the configured model: {exc}") from exc
    opt = make_optimizer(model, cfg)
    if "adam.t" in tensors:
        opt.load_state_dict(tensors)
    return model, opt, cfg, int(meta["step"])


def training_episode(cfg: RunConfig, step: int, plan: FoldPlan) -> Episode:
    return sample_episode(plan, cfg.data.fold, "train", cfg.mode, cfg.seed * 1_000_003 + step, scene_config(cfg),
                          shots=cfg.train.shots, query_frames=cfg.train.frames)


class Trainer:
    """Serial training loop writing a JSON-lines log and periodic checkpoints into ``run_dir``."""

    def __init__(self, cfg: RunConfig, run_dir: str | Path | None = None,
                 episode_fn: Callable[[int], Episode] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.plan = plan_folds(n_folds=cfg.data.folds, seed=cfg.data.fold_seed)
        self.episode_fn = episode_fn or (lambda step: training_episode(cfg, step, self.plan))
        self.model = build_model(cfg)
        self.opt = make_optimizer(self.model, cfg)
        self.step = 0
        self.history: list[dict] = []

    @classmethod
    def resume(cls, checkpoint: str | Path, run_dir: str | Path | None = None,
               episode_fn: Callable[[int], Episode] | None = None) -> "Trainer":
        model, opt, cfg, step = load_checkpoint(checkpoint)
        tr = cls(cfg, run_dir, episode_fn)
        tr.model, tr.opt, tr.step = model, opt, step
        return tr

    def _log(self, record: dict) -> None:
        self.history.append(record)
        if self.run_dir is not None:
            with open(self.run_dir / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint_path(self) -> Path:
        return self.run_dir / "checkpoint.fsrt"

    def run(self, steps: int | None = None, callback: Callable[["Trainer", dict], None] | None = None) -> list[dict]:
        steps = self.cfg.train.steps if steps is None else steps
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            (self.run_dir / "config.json").write_text(
                json.dumps({**self.cfg.to_flat(), "config_hash": self.cfg.content_hash()}, indent=2,
                           sort_keys=True) + "\n")
        end = self.step + steps
        while self.step < end:
            loss = train_step(self.model, self.opt, self.episode_fn(self.step), self.cfg)
            self.step += 1
            record = {"step": self.step, **loss.as_dict(), "lr": self.cfg.train.lr, "seed": self.cfg.seed}
            self._log(record)
            if callback is not None:
                callback(self, record)
            every = self.cfg.train.checkpoint_every
            if self.run_dir is not None and every > 0 and (self.step % every == 0 or self.step == end):
                save_checkpoint(self.checkpoint_path(), self.model, self.opt, self.cfg, self.step)
        return self.history
