"""End-to-end experiment: train one stochastic model, then score clean and
distorted test sets with both rejection rules and sweep ROC curves.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import distort as dist
from .datasets import Dataset, SplitSpec, gen_blobs, quadrant_basis, split
from .evaluate import CurveResult, EvalSample, sweep_roc
from .nets import (
    StochasticModel,
    TrainConfig,
    derive_seed,
    forward_deterministic,
    init_model,
    sample_runs,
    train,
)
from .selective import ztest_confidence


# Long, lightly regularised SGD: the network ends up overconfident, which is
# the regime where the softmax ceiling matters.
BENCHMARK_TRAIN = dict(epochs=600, learning_rate=0.05, momentum=0.9, kl_weight=1e-3, batch_size=32)


@dataclass
class BlobConfig:
    """Synthetic image-shaped blob benchmark (1 x 8 x 8 pixels, values in [0, 1])."""

    num_classes: int = 4
    image_shape: tuple[int, int, int] = (1, 8, 8)
    samples_per_class: int = 500
    separation: float = 0.5
    noise_sigma: float = 0.1
    offset: float = 0.4
    excluded: tuple[int, ...] = (3,)
    train_fraction: float = 2 / 3

    @property
    def dims(self) -> int:
        return int(np.prod(self.image_shape))


def blob_dataset(cfg: BlobConfig, seed: int) -> Dataset:
    """Blobs shifted by ``offset`` and clipped into the unit pixel range.

    With four classes each centre brightens one image quadrant, so the class
    signal is spatially extended; otherwise centres lie on pixel axes.
    """
    basis = quadrant_basis(cfg.image_shape) if cfg.num_classes == 4 else None
    ds = gen_blobs(
        cfg.num_classes, cfg.dims, cfg.samples_per_class,
        cfg.separation, cfg.noise_sigma, seed, cfg.image_shape, basis,
    )
    ds.images = np.clip(ds.images + np.float32(cfg.offset), 0, 1).astype(np.float32)
    return ds


def fit(
    train_set: Dataset,
    hidden: tuple[int, ...],
    config: TrainConfig,
    flipout: bool = True,
    on_epoch=None,
) -> StochasticModel:
    sizes = [train_set.flat().shape[1], *hidden, train_set.num_classes]
    model = init_model(sizes, seed=derive_seed(config.seed, 0), flipout=flipout)
    return train(model, train_set.flat(), train_set.labels, config, on_epoch=on_epoch)


@dataclass
class Scores:
    """Per-sample confidences for both rules over one test condition."""

    z_pred: np.ndarray
    z_conf: np.ndarray
    sr_pred: np.ndarray
    sr_conf: np.ndarray


def score(
    model: StochasticModel,
    x: np.ndarray,
    n_passes: int,
    seed: int,
    workers: int = 1,
    score_space: str = "softmax",
) -> Scores:
    """Z-test statistic from ``n_passes`` stochastic runs and SR from the mean path.

    Sample ``j`` draws its passes from seeds addressed by ``(seed, j)``.
    """
    x = np.asarray(x, dtype=np.float32).reshape(len(x), -1)

    def one(j: int) -> tuple[int, float]:
        m = sample_runs(model, x[j], n_passes, derive_seed(seed, j), score_space=score_space)
        return ztest_confidence(m)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            z = list(pool.map(one, range(len(x))))
    else:
        z = [one(j) for j in range(len(x))]
    probs = forward_deterministic(model, x) if len(x) else np.zeros((0, model.num_classes))
    return Scores(
        z_pred=np.array([p for p, _ in z], dtype=np.int64),
        z_conf=np.array([c for _, c in z], dtype=np.float64),
        sr_pred=probs.argmax(axis=1),
        sr_conf=probs.max(axis=1).astype(np.float64),
    )


def curves(
    s_in: Scores,
    labels_in: np.ndarray,
    s_out: Scores,
    name: str,
    methods=("ztest", "sr"),
    require_correct: bool = True,
) -> list[CurveResult]:
    results = []
    for method in methods:
        if method == "ztest":
            pi, ci, po, co = s_in.z_pred, s_in.z_conf, s_out.z_pred, s_out.z_conf
        else:
            pi, ci, po, co = s_in.sr_pred, s_in.sr_conf, s_out.sr_pred, s_out.sr_conf
        samples = [EvalSample(float(c), int(p), int(y)) for c, p, y in zip(ci, pi, labels_in)]
        samples += [EvalSample(float(c), int(p), None) for c, p in zip(co, po)]
        results.append(CurveResult(method, name, sweep_roc(samples, method, require_correct)))
    return results


@dataclass
class EvalOptions:
    n_passes: int = 30
    seed: int = 0
    workers: int = 1
    methods: tuple[str, ...] = ("ztest", "sr")
    score_space: str = "softmax"
    require_correct: bool = True
    distorted_in_dist: str = "positive"  # or "negative"
    distortions: list = field(default_factory=dist.table_suite)


def _cat(a: Scores, b: Scores) -> Scores:
    return Scores(*(np.concatenate([x, y]) for x, y in zip(
        (a.z_pred, a.z_conf, a.sr_pred, a.sr_conf),
        (b.z_pred, b.z_conf, b.sr_pred, b.sr_conf),
    )))


def _slice(s: Scores, sl: slice) -> Scores:
    return Scores(s.z_pred[sl], s.z_conf[sl], s.sr_pred[sl], s.sr_conf[sl])


def evaluate_model(
    model: StochasticModel, test_in: Dataset, test_out: Dataset, opts: EvalOptions
) -> list[CurveResult]:
    """Clean OOD condition first, then each distortion applied to both test sets.

    With ``distorted_in_dist="negative"`` a distortion condition keeps the
    clean in-distribution samples as positives and treats every distorted
    sample, in- or out-of-distribution, as a negative.
    """
    conditions = [("ood", None)] + [(d.label, d) for d in opts.distortions]
    k = len(test_in)
    results = []
    clean_in = None
    for c, (name, spec) in enumerate(conditions):
        img_in, img_out = test_in.images, test_out.images
        if spec is not None:
            spec = dist.DistortionSpec(spec.kind, spec.params, derive_seed(opts.seed, 1, c), spec.name)
            img_in = dist.apply_batch(img_in, spec)
            img_out = dist.apply_batch(img_out, spec)
        s = score(
            model, np.concatenate([img_in, img_out]), opts.n_passes,
            derive_seed(opts.seed, 2, c), opts.workers, opts.score_space,
        )
        s_in, s_out = _slice(s, slice(None, k)), _slice(s, slice(k, None))
        if spec is None:
            clean_in = s_in
        elif opts.distorted_in_dist == "negative":
            s_in, s_out = clean_in, _cat(s_in, s_out)
        results += curves(s_in, test_in.labels, s_out, name, opts.methods, opts.require_correct)
    return results


def blob_benchmark(
    seed: int,
    blob: BlobConfig = BlobConfig(),
    hidden: tuple[int, ...] = (32, 32),
    train_config: TrainConfig | None = None,
    opts: EvalOptions | None = None,
) -> list[CurveResult]:
    """Generate, split, train and evaluate the synthetic benchmark for one seed."""
    ds = blob_dataset(blob, derive_seed(seed, 10))
    tr, te_in, te_out = split(ds, SplitSpec(frozenset(blob.excluded), blob.train_fraction, derive_seed(seed, 11)))
    cfg = train_config or TrainConfig(**BENCHMARK_TRAIN, seed=derive_seed(seed, 12))
    model = fit(tr, hidden, cfg)
    opts = opts or EvalOptions(seed=derive_seed(seed, 13))
    return evaluate_model(model, te_in, te_out, opts)
