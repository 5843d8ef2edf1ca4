"""Ablation harnesses: matching threshold sweep, CMA wiring variants, ISM on/off."""

from __future__ import annotations

import copy

from .config import ConfigError, RunConfig
from .data.episodes import Episode
from .model import FewShotRVOS
from .train import Trainer, evaluate, held_out_episodes

SIGMAS = (0.3, 0.4, 0.5, 0.6, 0.7)
CMA_VARIANTS = (
    ("baseline", False, False),
    ("+self_affinity", True, False),
    ("+self_affinity+cross_affinity", True, True),
)


def _require_multi(cfg: RunConfig, what: str) -> None:
    if cfg.mode != "multi":
        raise ConfigError(f"the {what} ablation needs a multi-object checkpoint, got mode {cfg.mode!r}")


def sigma_sweep(model: FewShotRVOS, cfg: RunConfig, tests: int = 5, seed: int = 0,
                sigmas=SIGMAS, episodes: list[Episode] | None = None) -> list[dict]:
    """J, F and J&F for each threshold on the same held-out episodes."""
    _require_multi(cfg, "sigma")
    episodes = list(held_out_episodes(cfg, tests, seed)) if episodes is None else episodes
    rows = []
    for sigma in sigmas:
        rep = evaluate(model, cfg, seed=seed, sigma=sigma, episodes=episodes)
        rows.append({"sigma": sigma, "J": rep.mean_J, "F": rep.mean_F, "JF": rep.mean_JF})
    return rows


def cma_ablation(model: FewShotRVOS | None, cfg: RunConfig, tests: int = 5, seed: int = 0,
                 retrain_steps: int = 0, episodes: list[Episode] | None = None) -> list[dict]:
    """Evaluate the three CMA wirings.

    With ``retrain_steps == 0`` the trained ``model`` is evaluated with blocks
    bypassed by identity. Otherwise each wiring is trained from scratch for
    ``retrain_steps`` steps before evaluation.
    """
    episodes = list(held_out_episodes(cfg, tests, seed)) if episodes is None else episodes
    rows = []
    for name, use_self, use_cross in CMA_VARIANTS:
        if retrain_steps > 0:
            vcfg = copy.deepcopy(cfg)
            vcfg.model.use_self_affinity = use_self
            vcfg.model.use_cross_affinity = use_cross
            trainer = Trainer(vcfg)
            trainer.run(retrain_steps)
            net, ecfg = trainer.model, vcfg
        else:
            if model is None:
                raise ConfigError("bypass mode needs a trained model")
            net, ecfg = model, cfg
            net.cma.set_ablation(use_self, use_cross)
        try:
            rep = evaluate(net, ecfg, seed=seed, episodes=episodes)
        finally:
            if retrain_steps == 0:
                net.cma.set_ablation(cfg.model.use_self_affinity, cfg.model.use_cross_affinity)
        rows.append({"variant": name, "self_affinity": use_self, "cross_affinity": use_cross,
                     "retrained": retrain_steps > 0, "J": rep.mean_J, "F": rep.mean_F, "JF": rep.mean_JF})
    return rows


def ism_ablation(model: FewShotRVOS, cfg: RunConfig, tests: int = 5, seed: int = 0,
                 episodes: list[Episode] | None = None) -> list[dict]:
    """Threshold selection against keeping every instance trajectory."""
    _require_multi(cfg, "ism")
    episodes = list(held_out_episodes(cfg, tests, seed)) if episodes is None else episodes
    rows = []
    for name, all_instances in (("without_ism", True), ("with_ism", False)):
        rep = evaluate(model, cfg, seed=seed, all_instances=all_instances, episodes=episodes)
        rows.append({"variant": name, "J": rep.mean_J, "F": rep.mean_F, "JF": rep.mean_JF})
    return rows
