#!/usr/bin/env python3
"""CIFAR-10 run with automobile and truck held out as the unseen classes.

Needs the binary batches (``data_batch_*.bin``, ``test_batch.bin``). The
network is a stochastic MLP on raw pixels; expect tens of minutes on a CPU.

    python scripts/run_cifar.py ~/data/cifar-10-batches-bin --out results/cifar.csv
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from zselect.datasets import SplitSpec, load_dataset, split
from zselect.evaluate import report
from zselect.nets import TrainConfig, derive_seed, predict, save_model
from zselect.pipeline import EvalOptions, evaluate_model, fit


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hidden", type=int, nargs="+", default=[256, 128])
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--kl-weight", type=float, default=1e-3)
    ap.add_argument("--n-passes", type=int, default=30)
    ap.add_argument("--test-limit", type=int, default=2000,
                    help="cap on in- and out-of-distribution test samples (scoring is the slow part)")
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", type=Path, default=Path("results/cifar.csv"))
    args = ap.parse_args()

    ds = load_dataset(args.data)
    train_set, test_in, test_out = split(ds, SplitSpec(frozenset({1, 9}), 5 / 6, derive_seed(args.seed, 11)))
    test_in = test_in.subset(slice(0, args.test_limit))
    test_out = test_out.subset(slice(0, args.test_limit))
    t = time.perf_counter()
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, kl_weight=args.kl_weight,
                      seed=derive_seed(args.seed, 12))
    model = fit(train_set, tuple(args.hidden), cfg,
                on_epoch=lambda e, loss: print(f"epoch {e + 1}: loss {loss:.4f}", flush=True))
    acc = np.mean(predict(model, test_in.flat()) == test_in.labels)
    print(f"trained in {time.perf_counter() - t:.0f}s, test accuracy {acc:.3f}")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out.with_suffix(".model.bin"))
    opts = EvalOptions(n_passes=args.n_passes, seed=derive_seed(args.seed, 13), workers=args.workers)
    results = evaluate_model(model, test_in, test_out, opts)
    header = [f"cifar10 exclude=1,9 seed={args.seed} hidden={args.hidden} test_acc={acc:.4f}"]
    report(results, args.out, args.out.with_name(args.out.stem + "_curves.csv"), header,
           stream=sys.stdout)


if __name__ == "__main__":
    main()
