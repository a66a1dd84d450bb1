"""Command line driver: ``zselect train | eval | distort``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Options may also be
given in a ``key=value`` file via ``--config``; flags on the command line win.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import distort as dist
from .datasets import CONTAINER_MAGIC, Dataset, SplitSpec, load_dataset, split, write_container
from .evaluate import CurveResult, report
from .nets import MODEL_MAGIC, TrainConfig, derive_seed, load_model, save_model
from .pipeline import BENCHMARK_TRAIN, BlobConfig, EvalOptions, blob_dataset, evaluate_model, fit

REPORT_VERSION = "report-v1"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument plumbing


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def read_config(path) -> dict:
    """Parse a ``key=value`` file; ``#`` starts a comment, dashes become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="dataset container, CIFAR-10 .bin batch, or directory of batches")
    g.add_argument(
        "--synthetic",
        metavar="SPEC",
        help="synthetic blobs instead of --data, e.g. 'blobs' or 'blobs:separation=0.6,noise_sigma=0.1'",
    )
    g.add_argument("--exclude", type=_int_list, default=None,
                   help="held-out classes (default: 3 for blobs, 1,9 for CIFAR-10)")
    g.add_argument("--train-fraction", type=float, default=None,
                   help="fraction of kept-class samples used for training (default: 2/3 blobs, 5/6 files)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zselect",
        description="Selective classification with Z-tests over stochastic forward passes.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"zselect {__version__} (model {MODEL_MAGIC.decode()}, "
        f"dataset {CONTAINER_MAGIC.decode()}, {REPORT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    t = sub.add_parser("train", help="train a stochastic classifier", formatter_class=fmt)
    t.add_argument("--config", help="key=value file of defaults")
    t.add_argument("--seed", type=int, default=None, help="master seed (required)")
    _data_args(t)
    t.add_argument("--hidden", type=_int_list, default=(32, 32), help="hidden layer widths")
    t.add_argument("--epochs", type=int, default=None, help="default: benchmark preset for blobs, 20 otherwise")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None, help="learning rate")
    t.add_argument("--momentum", type=float, default=None)
    t.add_argument("--kl-weight", type=float, default=None, help="beta multiplying KL / dataset size")
    t.add_argument("--noise", choices=("flipout", "independent"), default="flipout",
                   help="weight-noise sampler")
    t.add_argument("--out", default="model.bin", help="checkpoint path")

    e = sub.add_parser("eval", help="score test sets and write AUROC report", formatter_class=fmt)
    e.add_argument("--config", help="key=value file of defaults")
    e.add_argument("--seed", type=int, default=None, help="master seed (required; must match train)")
    _data_args(e)
    e.add_argument("--model", default="model.bin", help="checkpoint from `train`")
    e.add_argument("--n-passes", type=int, default=30, help="stochastic passes per input")
    e.add_argument("--method", choices=("ztest", "sr", "both"), default="both")
    e.add_argument("--z", type=float, default=None,
                   help="also print the operating point at this Z threshold (curves are always swept)")
    e.add_argument("--score-space", choices=("softmax", "logit"), default="softmax",
                   help="scores fed to the Z-test")
    e.add_argument("--distort", action="append", default=None, metavar="SPEC",
                   help="kind=...,param=... (repeatable); default: the eight-corruption suite; 'none' for clean only")
    e.add_argument("--distorted-in-dist", choices=("positive", "negative"), default="positive",
                   help="how distorted in-distribution samples are counted")
    e.add_argument("--count-misclassified", action="store_true",
                   help="count accepted but misclassified in-distribution samples as true positives")
    e.add_argument("--workers", type=int, default=1, help="threads for per-sample scoring")
    e.add_argument("--out", default="report.csv", help="AUROC summary CSV")
    e.add_argument("--curves", default=None, help="per-threshold curve CSV (default: <out stem>_curves.csv)")

    d = sub.add_parser("distort", help="write a distorted copy of a dataset", formatter_class=fmt)
    d.add_argument("--config", help="key=value file of defaults")
    d.add_argument("--seed", type=int, default=None, help="seed for stochastic distortions (required)")
    d.add_argument("--data", help="input dataset container or CIFAR-10 batch")
    d.add_argument("--distort", default=None, metavar="SPEC",
                   help="kind=...,param=... ; gamma uses out = in ** gamma (gamma > 1 darkens)")
    d.add_argument("--out", default="distorted.bin", help="output container path")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        sub = parser._subparsers._group_actions[0].choices[ns.command]  # noqa: SLF001
        try:
            cfg = read_config(ns.config)
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        known = {a.dest: a for a in sub._actions}  # noqa: SLF001
        defaults = {}
        for key, raw in cfg.items():
            if key not in known or key in ("config", "help"):
                parser.error(f"{ns.config}: unknown option {key!r}")
            action = known[key]
            try:
                if action.type is not None:
                    defaults[key] = action.type(raw)
                elif isinstance(action, argparse._AppendAction):  # noqa: SLF001
                    defaults[key] = [v.strip() for v in raw.split(";") if v.strip()]
                elif isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                    defaults[key] = raw.lower() in ("1", "true", "yes", "on")
                else:
                    defaults[key] = raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"{ns.config}: bad value for {key}: {exc}")
            if action.choices is not None and defaults[key] not in action.choices:
                parser.error(f"{ns.config}: {key} must be one of {sorted(action.choices)}")
        sub.set_defaults(**defaults)
        ns = parser.parse_args(argv)
    if ns.seed is None:
        parser.error("--seed is required")
    ns._parser = parser
    return ns


# --------------------------------------------------------------------------
# data resolution shared by train and eval


def parse_synthetic(text: str) -> BlobConfig:
    name, _, rest = text.partition(":")
    if name.strip() != "blobs":
        raise UsageError(f"unknown synthetic dataset {name!r} (only 'blobs')")
    known = {f.name: f for f in fields(BlobConfig)}
    overrides = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in known or key in ("image_shape", "excluded"):
            raise UsageError(f"bad synthetic option {item!r}")
        overrides[key] = int(value) if key in ("num_classes", "samples_per_class") else float(value)
    return replace(BlobConfig(), **overrides)


def resolve_data(ns) -> tuple[Dataset, SplitSpec, bool]:
    """Dataset, split spec and whether it is synthetic; raises UsageError on bad input."""
    if bool(ns.data) == bool(ns.synthetic):
        raise UsageError("give exactly one of --data or --synthetic")
    if ns.synthetic:
        blob = parse_synthetic(ns.synthetic)
        ds = blob_dataset(blob, derive_seed(ns.seed, 10))
        excluded = ns.exclude if ns.exclude is not None else blob.excluded
        frac = ns.train_fraction if ns.train_fraction is not None else blob.train_fraction
        synthetic = True
    else:
        if not Path(ns.data).exists():
            raise UsageError(f"dataset not found: {ns.data}")
        ds = load_dataset(ns.data)
        excluded = ns.exclude if ns.exclude is not None else ((1, 9) if ds.num_classes == 10 else ())
        frac = ns.train_fraction if ns.train_fraction is not None else 5 / 6
        synthetic = False
    if any(c < 0 or c >= ds.num_classes for c in excluded):
        raise UsageError(f"--exclude ids must lie in [0, {ds.num_classes})")
    return ds, SplitSpec(frozenset(excluded), frac, derive_seed(ns.seed, 11)), synthetic


# --------------------------------------------------------------------------
# commands


def cmd_train(ns) -> int:
    ds, spec, synthetic = resolve_data(ns)
    train_set, _, _ = split(ds, spec)
    preset = BENCHMARK_TRAIN if synthetic else {}
    base = TrainConfig(**{**preset, "seed": derive_seed(ns.seed, 12)})
    cfg = replace(
        base,
        **{
            k: v
            for k, v in dict(
                epochs=ns.epochs, batch_size=ns.batch_size, learning_rate=ns.lr,
                momentum=ns.momentum, kl_weight=ns.kl_weight,
            ).items()
            if v is not None
        },
    )
    losses = []
    model = fit(train_set, ns.hidden, cfg, flipout=ns.noise == "flipout",
                on_epoch=lambda _e, loss: losses.append(loss))
    save_model(model, ns.out)
    print(f"trained on {len(train_set)} samples, {train_set.num_classes} classes; "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}; wrote {ns.out}")
    return 0


def cmd_eval(ns) -> int:
    if ns.n_passes < 2:
        raise UsageError("--n-passes must be at least 2")
    if ns.workers < 1:
        raise UsageError("--workers must be positive")
    ds, spec, _ = resolve_data(ns)
    _, test_in, test_out = split(ds, spec)
    if len(test_in) == 0:
        raise UsageError("no in-distribution test samples")
    if not Path(ns.model).exists():
        raise UsageError(f"model not found: {ns.model}")
    model = load_model(ns.model)
    if model.in_features != int(np.prod(test_in.image_shape)):
        raise ValueError("model input width does not match the dataset image size")
    if model.num_classes != test_in.num_classes:
        raise ValueError("model class count does not match the kept classes")

    if ns.distort is None:
        distortions = dist.table_suite()
    elif ns.distort == ["none"]:
        distortions = []
    else:
        try:
            distortions = [dist.parse_distortion(s) for s in ns.distort]
        except ValueError as exc:
            raise UsageError(str(exc))
    methods = ("ztest", "sr") if ns.method == "both" else (ns.method,)
    opts = EvalOptions(
        n_passes=ns.n_passes,
        seed=derive_seed(ns.seed, 13),
        workers=ns.workers,
        methods=methods,
        score_space=ns.score_space,
        require_correct=not ns.count_misclassified,
        distorted_in_dist=ns.distorted_in_dist,
        distortions=distortions,
    )
    results = evaluate_model(model, test_in, test_out, opts)
    curves_path = ns.curves or str(Path(ns.out).with_name(Path(ns.out).stem + "_curves.csv"))
    header = [
        f"zselect {__version__} {REPORT_VERSION}",
        f"seed={ns.seed} n_passes={ns.n_passes} method={ns.method} score_space={ns.score_space}",
        f"exclude={','.join(map(str, sorted(spec.excluded_classes)))} "
        f"train_fraction={spec.train_fraction:.6f} distorted_in_dist={ns.distorted_in_dist} "
        f"count_misclassified={ns.count_misclassified}",
        f"test_in={len(test_in)} test_out={len(test_out)}",
    ]
    report(results, ns.out, curves_path, header, stream=sys.stdout)
    if ns.z is not None:
        _print_operating_point(results, ns.z)
    print(f"wrote {ns.out} and {curves_path}")
    return 0


def _print_operating_point(results: list[CurveResult], z: float) -> None:
    for r in results:
        if r.method != "ztest":
            continue
        below = [p for p in r.curve.points if p.threshold >= z]
        p = min(below, key=lambda q: q.threshold)
        print(f"{r.distortion}: at z={z:g} FPR={p.fpr:.4f} TPR={p.tpr:.4f}")


def cmd_distort(ns) -> int:
    if not ns.data:
        raise UsageError("--data is required")
    if not Path(ns.data).exists():
        raise UsageError(f"dataset not found: {ns.data}")
    if not ns.distort:
        raise UsageError("--distort is required")
    try:
        spec = dist.parse_distortion(ns.distort, seed=ns.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    ds = load_dataset(ns.data)
    if ds.images.min(initial=0.0) < 0 or ds.images.max(initial=0.0) > 1:
        raise ValueError("distortions need pixels in [0, 1]")
    out = Dataset(dist.apply_batch(ds.images, spec), ds.labels, ds.num_classes)
    write_container(out, ns.out)
    params = ",".join(f"{k}={v}" for k, v in sorted(spec.resolved().items()))
    Path(str(ns.out) + ".meta").write_text(
        f"# zselect {__version__} distort\n"
        f"source={ns.data}\nkind={spec.kind}\nparams={params}\nseed={spec.seed}\n"
        f"count={len(out)}\n"
    )
    print(f"wrote {len(out)} {spec.kind} images to {ns.out}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "distort": cmd_distort}


def main(argv=None) -> int:
    ns = parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except UsageError as exc:
        ns._parser.print_usage(sys.stderr)
        print(f"zselect {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"zselect {ns.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
