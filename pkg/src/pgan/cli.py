"""Command line entry point: ``pgan train | sample | verify``."""

import argparse
import logging
import os
import sys

import numpy as np

from . import _kernels
from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, dump_config, load_config_file, resolve
from .data import ingest
from .grid import parse_grid, write_png_grid
from .networks import NetworkPlan
from .training import TrainingAborted, load_generator, run_training
from .verify import format_json, format_table, run_checks

log = logging.getLogger("pgan")


def draw_latents(seed, count, latent_dim=256):
    """``count`` i.i.d. standard-normal latent vectors from a seeded stream."""
    return np.random.default_rng(seed).standard_normal((count, latent_dim)).astype(np.float32)


def _flag_values(args):
    max_level = None
    if args.max_res is not None:
        max_level = NetworkPlan().level_for_resolution(args.max_res)
    return {
        "total_epochs": args.epochs,
        "batch_size": args.batch,
        "workers": args.workers,
        "latent_dim": args.latent_dim,
        "max_level": max_level,
        "seed": args.seed,
        "learning_rate": args.lr,
        "lambda_gp": args.lambda_gp,
        "n_critic": args.n_critic,
        "deterministic": True if args.deterministic else None,
    }


def cmd_train(args):
    file_values = load_config_file(args.config) if args.config else {}
    config = resolve(file_values, _flag_values(args))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(config))
    dataset = ingest(args.data, report_path=os.path.join(args.out, "skipped.txt"))
    log.info("indexed %d images (%d skipped)", len(dataset), len(dataset.skipped))
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt, rows = run_training(config, dataset, out_dir=args.out, resume=resume)
    log.info("finished after %d epochs, %d steps", ckpt.epoch, ckpt.step)
    return 0


def cmd_sample(args):
    rows, cols = parse_grid(args.grid)
    count = rows * cols if args.count is None else args.count
    if count > rows * cols:
        raise ConfigError(f"--count {count} exceeds the {rows}x{cols} grid")
    if count < 1:
        raise ConfigError("--count must be positive")
    G, phase, config = load_generator(args.ckpt)
    z = draw_latents(args.seed, count, G.plan.latent_dim)
    with T.no_grad():
        images = G(z, phase).data
    write_png_grid(images, rows, cols, args.out)
    log.info("wrote %d samples at %dx%d to %s", count, images.shape[1], images.shape[2], args.out)
    return 0


def cmd_verify(args):
    results = run_checks(seed=args.seed or 0, inject_fault=args.inject_fault)
    print(format_json(results) if args.json else format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="pgan", description="Progressive WGAN-GP trainer and sampler.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on an image directory")
    t.add_argument("--data", required=True, help="directory of RGB PNG/JPEG images")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--latent-dim", type=int)
    t.add_argument("--max-res", type=int, help="final resolution: 4, 8, 16, 32 or 64")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda-gp", type=float)
    t.add_argument("--n-critic", type=int)
    t.add_argument("--deterministic", action="store_true", help="single-producer loader")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="render a grid of samples from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True, help="output PNG path")
    s.add_argument("--count", type=int)
    s.add_argument("--grid", default="4x4", help="RxC")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    v = sub.add_parser("verify", help="run the built-in verification suite")
    v.add_argument("--json", action="store_true")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-fault", action="store_true", help="zero the pixelnorm epsilon to exercise a failing check")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if os.environ.get("PGAN_NUM_THREADS"):
        _kernels.set_num_threads(os.environ["PGAN_NUM_THREADS"])
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"pgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"pgan train: aborted: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"pgan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
