"""Command line entry point: ``tdrp <subcommand> [--config FILE] [--set key=value ...]``.

The root seed can be overridden with the ``TDRP_SEED`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .harness import (ABLATION_COLUMNS, eval_policy, pretrain_skills, record_demonstrations,
                      run_single_task, run_skill_chain, run_step_ablation, stream_seed)
from .representation import encode, export_embeddings
from .storage import load_checkpoint, read_demonstrations, write_demonstrations

log = logging.getLogger("tdrp")


def _config(args, env_id=None) -> ExperimentConfig:
    cfg = load_config(args.config, args.set or [], env_id=env_id or getattr(args, "env", None))
    seed = os.environ.get("TDRP_SEED")
    if seed is not None:
        try:
            cfg = replace(cfg, seeds=(int(seed),))
        except ValueError as exc:
            raise ConfigError(f"TDRP_SEED must be an integer, got {seed!r}") from exc
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    curves = []
    for seed in cfg.seeds:
        res = run_single_task(cfg, seed, out / f"seed_{seed}")
        curves.append(res.column("success_rate"))
        print(f"seed {seed}: final success {curves[-1][-1] if len(curves[-1]) else float('nan'):.2f}")
    if curves and len(curves[0]):
        plotting.learning_curves({cfg.reward.mode: curves}, out / "learning_curves.png")
    return 0


def cmd_chain(args) -> int:
    cfg = _config(args, env_id="chain2skill")
    out = Path(cfg.out_dir)
    pres, posts = [], []
    for seed in cfg.seeds:
        sd = out / f"seed_{seed}"
        if args.ckpt_a and args.ckpt_b:
            ca, cb = Path(args.ckpt_a), Path(args.ckpt_b)
        else:
            ca, cb = pretrain_skills(cfg, seed, sd / "pretrain")
        res = run_skill_chain(cfg, seed, ca, cb, sd, args.finetune_iterations, args.episodes)
        pres.append(res.success_pre)
        posts.append(res.success_post)
        plotting.chain_distance([r["mean_center_distance"] for r in res.rows], sd / "chain_distance.png",
                                res.success_pre, res.success_post)
        print(f"seed {seed}: chained success {res.success_pre:.3f} -> {res.success_post:.3f}")
    print(f"mean chained success {np.mean(pres):.3f} -> {np.mean(posts):.3f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args, env_id="chain")
    steps = [int(s) for s in args.steps.split(",") if s.strip()]
    out = Path(cfg.out_dir)
    rows = run_step_ablation(cfg, steps, cfg.seeds[0], train_steps=args.train_steps, out_dir=out)
    for r in rows:
        print(" ".join(f"{c}={r[c]:.4g}" if isinstance(r[c], float) else f"{c}={r[c]}" for c in ABLATION_COLUMNS))
    plotting.ablation([r["step"] for r in rows], [r["spearman_rho"] for r in rows], rows[0]["raw_rho"],
                      out / "ablation.png")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    spec = replace(cfg.env, seed=stream_seed(cfg.seeds[0], "env"))
    success, ret = eval_policy(args.checkpoint, spec, args.episodes, cfg.seeds[0])
    print(f"success_rate={success:.4f} mean_raw_return={ret:.4f}")
    return 0


def cmd_embed(args) -> int:
    cfg = _config(args)
    _, encoder, _, _ = load_checkpoint(args.checkpoint)
    if args.trajectories:
        trajs = read_demonstrations(args.trajectories)
    else:
        spec = replace(cfg.env, seed=stream_seed(cfg.seeds[0], "env"))
        trajs = record_demonstrations(spec, args.n, cfg.seeds[0], noise=args.noise)
    if trajs[0].shape[1] != encoder.params.in_dim:
        raise ConfigError(f"trajectory state dim {trajs[0].shape[1]} != encoder input {encoder.params.in_dim}")
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(path, encoder, trajs)
    emb = np.concatenate([encode(encoder, t) for t in trajs])
    ts = np.concatenate([np.arange(len(t)) for t in trajs])
    plotting.embedding_scatter(emb, ts, path.with_suffix(".png"))
    print(f"wrote {path}")
    return 0


def cmd_demo_record(args) -> int:
    cfg = _config(args)
    trajs = record_demonstrations(cfg.env, args.n, cfg.seeds[0], noise=args.noise, speed=args.speed)
    write_demonstrations(args.output, trajs)
    print(f"wrote {len(trajs)} trajectories to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdrp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, env=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        if env:
            sp.add_argument("--env", choices=["chain", "umaze", "chain2skill"], help="preset to start from")
        return sp

    sp = common(sub.add_parser("train", help="joint encoder/policy training on one task"))
    sp.add_argument("--out", help="output directory (overrides out_dir)")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("chain", help="skill-chaining fine-tune pipeline"), env=False)
    sp.add_argument("--out")
    sp.add_argument("--ckpt-a", help="pretrained skill A checkpoint (pretrains both when omitted)")
    sp.add_argument("--ckpt-b", help="pretrained skill B checkpoint")
    sp.add_argument("--finetune-iterations", type=int, default=None)
    sp.add_argument("--episodes", type=int, default=200, help="chained evaluation episodes")
    sp.set_defaults(func=cmd_chain)

    sp = common(sub.add_parser("ablate-step", help="encoder quality for several step values"), env=False)
    sp.add_argument("--out")
    sp.add_argument("--steps", default="4,8,16,24")
    sp.add_argument("--train-steps", type=int, default=1000)
    sp.set_defaults(func=cmd_ablate)

    sp = common(sub.add_parser("eval", help="deterministic evaluation of a checkpoint"))
    sp.add_argument("checkpoint")
    sp.add_argument("--episodes", type=int, default=100)
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("embed", help="export embeddings of trajectories"))
    sp.add_argument("checkpoint")
    sp.add_argument("--trajectories", help="demonstration-format CSV (records fresh ones when omitted)")
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--noise", type=float, default=0.3)
    sp.add_argument("-o", "--output", default="embeddings.csv")
    sp.set_defaults(func=cmd_embed)

    sp = common(sub.add_parser("demo-record", help="script solution trajectories to a demonstration file"))
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--noise", type=float, default=0.3)
    sp.add_argument("--speed", type=float, default=1.0)
    sp.add_argument("-o", "--output", default="demos.csv")
    sp.set_defaults(func=cmd_demo_record)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"tdrp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
