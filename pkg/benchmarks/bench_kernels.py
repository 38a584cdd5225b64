"""
Numba vs pure-numpy kernels: unfold/fold (im2col/col2im), 2x upsample and
2x block sum, plus one full training step at level 1.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Shapes follow the networks at batch 16. The numba kernels are warmed up
(compiled) before timing; the best of ``--repeat`` runs is reported.
"""

import argparse
import json
import time

import numpy as np

from pgan import _kernels
from pgan.networks import PhaseState
from pgan.training import Trainer, TrainingConfig, train_step

CASES = [
    # name, fn factory, shape
    ("unfold 3x3 32x32x32", lambda x: (lambda: _kernels.unfold(x, 3, 1)), (16, 32, 32, 32)),
    ("unfold 3x3 64x64x16", lambda x: (lambda: _kernels.unfold(x, 3, 1)), (16, 64, 64, 16)),
    ("fold 3x3 32x32x32", None, (16, 32, 32, 32)),
    ("upsample 32x32x32", lambda x: (lambda: _kernels.upsample2x(x)), (16, 32, 32, 32)),
    ("block_sum 64x64x16", lambda x: (lambda: _kernels.block_sum2x(x)), (16, 64, 64, 16)),
]


def best_of(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def kernel_case(factory, shape, rng):
    x = rng.standard_normal(shape).astype(np.float32)
    if factory is None:  # fold needs column input
        n, h, w, c = shape
        cols = rng.standard_normal((n, h, w, 3, 3, c)).astype(np.float32)
        return lambda: _kernels.fold(cols, h, w, 1)
    return factory(x)


def step_case():
    cfg = TrainingConfig(total_epochs=2, max_level=1, batch_size=16, deterministic=True)
    tr = Trainer(cfg)
    tr.grow_to(1)
    real = np.random.default_rng(0).uniform(-1, 1, (16, 8, 8, 3)).astype(np.float32)
    rng = np.random.default_rng(1)
    return lambda: train_step(tr.G, tr.D, real, cfg, rng, tr.opt_g, tr.opt_d, PhaseState(1, 0.5))


def run(repeat):
    rng = np.random.default_rng(0)
    rows = []
    prev = _kernels.get_backend()
    try:
        for name, factory, shape in CASES + [("train_step level 1", "step", None)]:
            timings = {}
            for backend in ("numpy", "numba"):
                _kernels.set_backend(backend)
                fn = step_case() if factory == "step" else kernel_case(factory, shape, rng)
                timings[backend] = best_of(fn, repeat if factory != "step" else max(3, repeat // 5))
            rows.append({"case": name, **timings, "speedup": timings["numpy"] / timings["numba"]})
    finally:
        _kernels.set_backend(prev)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    rows = run(args.repeat)
    print(f"{'case':<24} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for r in rows:
        print(f"{r['case']:<24} {r['numpy'] * 1e3:>10.2f} {r['numba'] * 1e3:>10.2f} {r['speedup']:>7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
