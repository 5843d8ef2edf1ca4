"""Fit one fixed training episode and report when episode J&F first crosses a target."""

import argparse
import json
import time

import numpy as np

from fsrvos.config import load_config
from fsrvos.data import plan_folds, sample_episode
from fsrvos.train import Trainer, score_episode


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--frames", type=int, default=4)
    ap.add_argument("--episode-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-every", type=int, default=25)
    ap.add_argument("--target", type=float, default=0.85)
    args = ap.parse_args()

    cfg = load_config(None, {"seed": args.seed, "train.frames": args.frames, "train.checkpoint_every": 0})
    episode = sample_episode(plan_folds(), cfg.data.fold, "train", "single", args.episode_seed,
                             shots=cfg.train.shots, query_frames=args.frames)
    trainer = Trainer(cfg, episode_fn=lambda step: episode)
    t0, curve = time.time(), []

    def progress(tr, rec):
        if tr.step % args.eval_every == 0 or tr.step == args.steps:
            j, f = score_episode(tr.model, episode, cfg)
            curve.append({"step": tr.step, "loss": rec["loss_total"], "J": j, "F": f, "JF": (j + f) / 2})
            print(json.dumps(curve[-1]), flush=True)

    trainer.run(args.steps, progress)
    losses = np.array([r["loss_total"] for r in trainer.history])
    hit = next((c["step"] for c in curve if c["JF"] >= args.target), None)
    print(json.dumps({"expression": episode.query_expression, "final_JF": curve[-1]["JF"], "first_step_at_target": hit,
                      "loss_first20": float(losses[:20].mean()), "loss_last20": float(losses[-20:].mean()),
                      "seconds": time.time() - t0}, indent=2))


if __name__ == "__main__":
    main()
