"""Command-line entry point: gen-data, train, eval, predict, ablate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ablation import cma_ablation, ism_ablation, sigma_sweep
from .config import ConfigError, check_reference_defaults, load_config
from .data import CLASSES, Corpus, FoldPlanError, SceneConfig, generate_corpus, load_frames, load_scene, plan_folds, write_pgm
from .data.episodes import Episode
from .tensor.core import NonFiniteError
from .train import Trainer, evaluate, held_out_episodes, load_checkpoint, predict

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class CLIError(ConfigError):
    pass


def resolve_seed(seed: int | None) -> int | None:
    """Explicit flag, else the FSRVOS_SEED environment variable, else None (config default)."""
    if seed is not None:
        return seed
    env = os.environ.get("FSRVOS_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise CLIError(f"FSRVOS_SEED must be an integer, got {env!r}") from exc


def prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and not path.is_dir():
        raise CLIError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise CLIError(f"{path} is not empty; pass --force to write into it")
    path.mkdir(parents=True, exist_ok=True)


def parse_overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CLIError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _write_json(path: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")


def cmd_gen_data(args) -> int:
    classes = CLASSES[: args.classes] if args.classes <= len(CLASSES) else None
    if classes is None:
        raise CLIError(f"at most {len(CLASSES)} classes are available")
    plan_folds(classes, n_folds=args.folds)  # surfaces indivisible class counts before writing
    seed = resolve_seed(args.seed) or 0
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    cfg = SceneConfig(height=args.height, width=args.width)
    index = generate_corpus(out, classes, args.scenes_per_class, seed, args.mode, cfg, args.frames)
    print(f"wrote {sum(len(v) for v in index['classes'].values())} scenes to {out}")
    return 0


def _corpus_episode_fn(corpus: Corpus, cfg, split: str, offset: int = 0):
    plan = plan_folds(n_folds=cfg.data.folds, seed=cfg.data.fold_seed)
    return lambda step: corpus.sample_episode(plan, cfg.data.fold, split, cfg.seed * 1_000_003 + offset + step,
                                              cfg.train.shots, cfg.train.frames)


def cmd_train(args) -> int:
    overrides = parse_overrides(args.set)
    seed = resolve_seed(args.seed)
    for key, value in (("data.fold", args.fold), ("mode", args.mode), ("train.steps", args.steps), ("seed", seed)):
        if value is not None:
            overrides[key] = value
    out = Path(args.out)
    if args.resume:
        trainer = Trainer.resume(args.resume, out)
        cfg = trainer.cfg
        out.mkdir(parents=True, exist_ok=True)
    else:
        cfg = load_config(args.config, overrides)
        prepare_out_dir(out, args.force)
        trainer = Trainer(cfg, out)
    if args.corpus:
        trainer.episode_fn = _corpus_episode_fn(Corpus(args.corpus), cfg, "train")
    if args.resume and args.steps is not None:
        cfg.train.steps = args.steps
    remaining = cfg.train.steps - trainer.step
    every = max(1, args.log_every)

    def progress(tr, rec):
        if tr.step % every == 0:
            print(json.dumps(rec, sort_keys=True), flush=True)

    trainer.run(max(0, remaining), progress)
    print(f"trained to step {trainer.step}; checkpoint {trainer.checkpoint_path()}")
    return 0


def _eval_episodes(args, cfg, seed: int) -> list[Episode]:
    if getattr(args, "corpus", None):
        fn = _corpus_episode_fn(Corpus(args.corpus), cfg, "test", offset=seed * 1000)
        return [fn(i) for i in range(args.tests)]
    return list(held_out_episodes(cfg, args.tests, seed))


def _load(args):
    overrides = {}
    if getattr(args, "fold", None) is not None:
        overrides["data.fold"] = args.fold
    model, _, cfg, step = load_checkpoint(args.checkpoint, overrides)
    seed = resolve_seed(args.seed)
    return model, cfg, step, cfg.seed if seed is None else seed


def cmd_eval(args) -> int:
    model, cfg, step, seed = _load(args)
    episodes = _eval_episodes(args, cfg, seed)
    report = evaluate(model, cfg, seed=seed, sigma=args.sigma, episodes=episodes)
    report.extra.update({"checkpoint_step": step, "config": cfg.to_flat()})
    _write_json(Path(args.out) if args.out else None, report.to_dict())
    print(f"J {report.mean_J:.4f}  F {report.mean_F:.4f}  J&F {report.mean_JF:.4f}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    model, _, cfg, _ = load_checkpoint(args.checkpoint)
    support_dir = Path(args.support)
    meta = json.loads((support_dir / "scene.json").read_text())
    n_t, n_obj = meta["frame_count"], len(meta["objects"])
    missing = [f"mask_{t:03d}_{k:02d}.pgm" for t in range(n_t) for k in range(n_obj)
               if not (support_dir / f"mask_{t:03d}_{k:02d}.pgm").exists()]
    if missing:
        raise CLIError(f"support scene {support_dir} is missing masks: {missing[:3]}")
    support = load_scene(support_dir)
    shots = min(cfg.train.shots, support.frames.shape[0])
    query_frames, query_meta = load_frames(args.scene)
    expression = args.expression or query_meta["expressions"][0]
    mode = args.mode or cfg.mode
    sigma = cfg.train.sigma if args.sigma is None else args.sigma

    episode = Episode(support.class_name, mode, support.frames[:shots], support.target_masks[:, :shots].any(axis=0),
                      support.expression, query_frames, expression,
                      np.zeros((1,) + query_frames[:, 0].shape, dtype=bool), support.scene_id, Path(args.scene).name)
    pred = predict(model, episode, mode, sigma, cfg.data.eval_upsample)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    for t in range(query_frames.shape[0]):
        write_pgm(out / f"mask_{t:03d}.pgm", pred.selection.union[t])
        if mode == "multi":
            for j, idx in enumerate(pred.selection.idx):
                write_pgm(out / f"mask_{t:03d}_i{idx}.pgm", pred.selection.masks[j, t])
    _write_json(out / "prediction.json", {
        "mode": mode, "sigma": sigma, "expression": expression,
        "mean_scores": pred.scores.mean(axis=1).tolist(), "idx": list(pred.selection.idx),
        "frames": int(query_frames.shape[0]), "config_hash": cfg.content_hash(),
    })
    print(f"selected {list(pred.selection.idx)}; masks in {out}")
    return 0


def cmd_ablate(args) -> int:
    model, cfg, step, seed = _load(args)
    episodes = _eval_episodes(args, cfg, seed)
    if args.what == "sigma":
        rows = sigma_sweep(model, cfg, seed=seed, episodes=episodes)
    elif args.what == "cma":
        rows = cma_ablation(model, cfg, seed=seed, retrain_steps=args.retrain_steps, episodes=episodes)
    else:
        rows = ism_ablation(model, cfg, seed=seed, episodes=episodes)
    payload = {"what": args.what, "rows": rows, "seed": seed, "tests": len(episodes), "fold": cfg.data.fold,
               "checkpoint_step": step, "config_hash": cfg.content_hash()}
    _write_json(Path(args.out) if args.out else None, payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsrvos", description="Few-shot referring video object segmentation")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic moving-shapes corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--folds", type=int, default=4)
    g.add_argument("--scenes-per-class", type=int, default=4)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--mode", choices=("single", "multi"), default="single")
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="episodic training with periodic checkpoints")
    t.add_argument("--config", default=None, help="JSON file with flat dotted keys")
    t.add_argument("--fold", type=int, default=None)
    t.add_argument("--mode", choices=("single", "multi"), default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--corpus", default=None, help="sample episodes from a generated corpus")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    t.add_argument("--log-every", type=int, default=10)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score seeded held-out episodes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--fold", type=int, default=None)
    e.add_argument("--tests", type=int, default=5)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--sigma", type=float, default=None)
    e.add_argument("--corpus", default=None)
    e.add_argument("--out", default=None, help="report path; stdout when omitted")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one query clip given a support scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, help="query scene directory")
    p.add_argument("--support", required=True, help="support scene directory with masks")
    p.add_argument("--expression", default=None)
    p.add_argument("--mode", choices=("single", "multi"), default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="sigma sweep, CMA wiring, or ISM on/off")
    a.add_argument("--what", choices=("sigma", "cma", "ism"), required=True)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--fold", type=int, default=None)
    a.add_argument("--tests", type=int, default=5)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--retrain-steps", type=int, default=0, help="cma only: retrain each wiring from scratch")
    a.add_argument("--corpus", default=None)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_ablate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        check_reference_defaults()
        return args.func(args)
    except (ConfigError, FoldPlanError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
