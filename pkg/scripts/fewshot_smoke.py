"""Train on the fold's training classes, then score held-out classes against the copy-support baseline."""

import argparse
import json
import time
from pathlib import Path

from fsrvos.config import load_config
from fsrvos.train import Trainer, copy_support_baseline, evaluate, held_out_episodes


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--tests", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", choices=("single", "multi"), default="single")
    ap.add_argument("--fold", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None, help="run directory for log, checkpoint and report")
    ap.add_argument("--log-every", type=int, default=100)
    args = ap.parse_args()

    cfg = load_config(None, {"seed": args.seed, "mode": args.mode, "data.fold": args.fold,
                             "train.steps": args.steps})
    trainer = Trainer(cfg, args.out)
    t0 = time.time()

    def progress(tr, rec):
        if tr.step % args.log_every == 0:
            print(f"step {tr.step:5d}  loss {rec['loss_total']:.4f}  {time.time() - t0:7.1f}s", flush=True)

    trainer.run(args.steps, progress)
    episodes = list(held_out_episodes(cfg, args.tests, args.seed))
    report = evaluate(trainer.model, cfg, episodes=episodes)
    baseline = copy_support_baseline(cfg, episodes, args.seed)
    summary = {
        "steps": args.steps,
        "mean_JF": report.mean_JF,
        "baseline_mean_JF": baseline.mean_JF,
        "beats_baseline": report.mean_JF > baseline.mean_JF,
        "train_seconds": time.time() - t0,
        "episodes": report.to_dict()["episodes"],
        "baseline_episodes": baseline.to_dict()["episodes"],
    }
    if args.out is not None:
        report.save(args.out / "report.json")
        (args.out / "smoke.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
