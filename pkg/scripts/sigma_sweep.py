"""Briefly train a multi-object model, then sweep the matching threshold and compare CMA wirings."""

import argparse
import json

from fsrvos.ablation import cma_ablation, ism_ablation, sigma_sweep
from fsrvos.config import load_config
from fsrvos.train import Trainer, held_out_episodes, load_checkpoint


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", default=None, help="use a trained multi-mode checkpoint instead of training")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--tests", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.checkpoint:
        model, _, cfg, _ = load_checkpoint(args.checkpoint)
    else:
        cfg = load_config(None, {"seed": args.seed, "mode": "multi", "train.steps": args.steps})
        trainer = Trainer(cfg)
        trainer.run()
        model = trainer.model
    episodes = list(held_out_episodes(cfg, args.tests, args.seed))
    out = {
        "sigma": sigma_sweep(model, cfg, seed=args.seed, episodes=episodes),
        "cma": cma_ablation(model, cfg, seed=args.seed, episodes=episodes),
        "ism": ism_ablation(model, cfg, seed=args.seed, episodes=episodes),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
