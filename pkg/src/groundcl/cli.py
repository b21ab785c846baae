"""Command-line entry point.

Exit status: 0 on success, 1 for configuration or usage errors, 2 when a
run aborts at runtime.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, RunMode, load_config, valid_modes
from .curriculum import Trainer, build_task_pool, split_train_test
from .errors import ConfigError, GroundCLError
from .evaluation import (emit_difficulty_series, evaluate_policy, format_metrics_table,
                         read_training_log, write_episodes, write_metrics)
from .taskgen import RealTaskSet, save_tasks
from .vae import TaskVae, reconstruction_accuracy, train_vae

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("groundcl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, mode=False):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="override run.master_seed")
    if mode:
        p.add_argument("--mode", help=f"run mode, one of: {', '.join(valid_modes())}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="groundcl", description="Grounded curriculum learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-tasks", help="generate the real task pool into a directory")
    _common(p)
    p.add_argument("--out", required=True, help="output task directory")
    p.add_argument("--count", type=int, help="override tasks.pool_size")

    p = sub.add_parser("train-vae", help="pretrain the task VAE on the training split")
    _common(p)
    p.add_argument("--out", required=True, help="output VAE checkpoint")

    p = sub.add_parser("train", help="train in any run mode, then evaluate on the test split")
    _common(p, mode=True)
    p.add_argument("--out", help="output directory (default: run.output_dir)")
    p.add_argument("--iterations", type=int, help="override run.iterations")
    p.add_argument("--vae", help="VAE checkpoint from train-vae (skips pretraining)")
    p.add_argument("--resume", help="continue from a training checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint's student on the test split")
    p.add_argument("checkpoint")
    p.add_argument("--out", help="directory for metrics.csv and episodes.csv")
    p.add_argument("--episodes", type=int, help="episodes per test task")
    p.add_argument("--seed", type=int, default=0, help="evaluation rng seed")

    p = sub.add_parser("emit-plots", help="write the difficulty series for a training log")
    p.add_argument("log", help="log.csv written by train")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.run.master_seed = args.seed
    mode = getattr(args, "mode", None)
    if mode is not None:
        cfg.run.mode = RunMode.parse(mode).value
    if getattr(args, "iterations", None) is not None:
        cfg.run.iterations = args.iterations
    return cfg.validate()


def _vae_from_checkpoint(path, cfg: RunConfig) -> TaskVae:
    ckpt = load_checkpoint(path)
    if "vae" not in ckpt.arrays:
        raise ConfigError(f"{path} holds no VAE parameters")
    vc = cfg.vae
    vae = TaskVae(cfg.tasks.width, cfg.tasks.height, vc.latent_dim, vc.hidden, vc.kl_weight,
                  init="zeros")
    vae.params = ckpt.arrays["vae"]
    return vae


def cmd_gen_tasks(args):
    cfg = _load_run_config(args)
    if args.count is not None:
        cfg.tasks.pool_size = args.count
    cfg.tasks.dir = None
    tasks, split_seed = build_task_pool(cfg)
    save_tasks(RealTaskSet(tasks, split_seed), args.out)
    print(f"wrote {len(tasks)} tasks to {args.out}")


def cmd_train_vae(args):
    cfg = _load_run_config(args)
    tasks, split_seed = build_task_pool(cfg)
    train, test = split_train_test(tasks, cfg.tasks.train_ratio, split_seed)
    vc = cfg.vae
    rng = np.random.default_rng(cfg.run.master_seed)
    vae = TaskVae(cfg.tasks.width, cfg.tasks.height, vc.latent_dim, vc.hidden, vc.kl_weight,
                  rng=rng)
    vae, curve = train_vae(vae, train, vc.epochs, rng, vc.learning_rate, vc.batch_size,
                           vc.warmup_fraction)
    save_checkpoint(Checkpoint({"vae": vae.params, "loss_curve": curve},
                               {"kind": "vae", "config": cfg.to_dict()}), args.out)
    print(f"train reconstruction accuracy {reconstruction_accuracy(vae, train.tasks):.4f}")
    if test is not None:
        print(f"test reconstruction accuracy  {reconstruction_accuracy(vae, test.tasks):.4f}")


def _evaluate_and_write(trainer: Trainer, out: Path, episodes, seed):
    if trainer.test_set is None:
        raise ConfigError("the task split left no test tasks")
    report = evaluate_policy(trainer.student.policy, trainer.test_set, episodes,
                             np.random.default_rng(seed), trainer.config.env)
    write_metrics(report.metrics, out / "metrics.csv")
    write_episodes(report.episodes, out / "episodes.csv")
    print(format_metrics_table(report.metrics))
    return report


def cmd_train(args):
    cfg = _load_run_config(args)
    out = Path(args.out or cfg.run.output_dir)
    if args.resume:
        trainer = Trainer.from_checkpoint(load_checkpoint(args.resume), output_dir=out,
                                          config=cfg)
    else:
        vae = _vae_from_checkpoint(args.vae, cfg) if args.vae else None
        trainer = Trainer(cfg, vae=vae, output_dir=out)
    step = max(1, cfg.run.iterations // 10)

    def progress(row):
        if row.iteration % step == 0:
            log.info("iteration %d task %s spl %d return %.3f", row.iteration, row.task_id,
                     row.shortest_path_length, row.student_return)

    trainer.run(progress=progress)
    emit_difficulty_series(trainer.log, out / "difficulty.csv")
    _evaluate_and_write(trainer, out, cfg.run.eval_episodes, cfg.run.master_seed)
    print(f"outputs in {out}")


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    if "config" not in ckpt.meta or "student.policy" not in ckpt.arrays:
        raise ConfigError(f"{args.checkpoint} is not a training checkpoint")
    trainer = Trainer.from_checkpoint(ckpt)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent
    episodes = args.episodes or trainer.config.run.eval_episodes
    _evaluate_and_write(trainer, out, episodes, args.seed)


def cmd_emit_plots(args):
    emit_difficulty_series(read_training_log(args.log), args.out)
    print(f"wrote {args.out}")


COMMANDS = {
    "gen-tasks": cmd_gen_tasks,
    "train-vae": cmd_train_vae,
    "train": cmd_train,
    "eval": cmd_eval,
    "emit-plots": cmd_emit_plots,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GroundCLError, FloatingPointError, OSError, ValueError) as exc:
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
