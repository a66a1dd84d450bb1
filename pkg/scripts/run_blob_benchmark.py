#!/usr/bin/env python3
"""Synthetic blob benchmark: Z-test vs Softmax Response over several seeds.

Writes one summary CSV per seed and prints the per-distortion AUROC gap.

    python scripts/run_blob_benchmark.py --seeds 0 1 2 --out-dir results/blobs
"""
import argparse
import time
from dataclasses import replace
from pathlib import Path

from zselect.evaluate import comparison_table, report
from zselect.nets import TrainConfig, derive_seed
from zselect.pipeline import BENCHMARK_TRAIN, BlobConfig, EvalOptions, blob_benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--separation", type=float, default=BlobConfig.separation)
    ap.add_argument("--epochs", type=int, default=BENCHMARK_TRAIN["epochs"])
    ap.add_argument("--n-passes", type=int, default=30)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=Path("results/blobs"))
    args = ap.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    blob = replace(BlobConfig(), separation=args.separation)
    for seed in args.seeds:
        t = time.perf_counter()
        cfg = TrainConfig(**{**BENCHMARK_TRAIN, "epochs": args.epochs}, seed=derive_seed(seed, 12))
        opts = EvalOptions(n_passes=args.n_passes, seed=derive_seed(seed, 13), workers=args.workers)
        results = blob_benchmark(seed, blob, train_config=cfg, opts=opts)
        rows = report(
            results,
            args.out_dir / f"seed{seed}.csv",
            args.out_dir / f"seed{seed}_curves.csv",
            [f"seed={seed} separation={args.separation} epochs={args.epochs} n_passes={args.n_passes}"],
        )
        print(f"seed {seed} ({time.perf_counter() - t:.1f}s)")
        print(comparison_table(rows), flush=True)


if __name__ == "__main__":
    main()
