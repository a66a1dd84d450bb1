"""Multilayer perceptron with Gaussian stochastic weights, trained from scratch.

Each dense layer holds a mean and a log standard deviation per weight. A
forward pass samples ``W = mean + exp(log_std) * eps``; in Flipout mode one
``eps`` is shared across a batch and decorrelated per example with random
sign vectors on the input and output side. Gradients are written out by hand.
"""
from __future__ import annotations

import copy
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
ACTIVATIONS = ("relu", "identity")


@dataclass
class StochasticLayer:
    weight_mean: np.ndarray  # (out, in)
    weight_log_std: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight_mean.ndim != 2 or self.weight_mean.shape != self.weight_log_std.shape:
            raise ValueError("weight_mean and weight_log_std must share a 2-D shape")
        if self.bias.shape != (self.weight_mean.shape[0],):
            raise ValueError("bias length must equal the layer output width")

    @property
    def in_features(self) -> int:
        return self.weight_mean.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight_mean.shape[0]

    def weight_std(self) -> np.ndarray:
        """Per-weight noise scale used by the sampler.

        Log-stds are clamped to ``[LOG_STD_MIN, LOG_STD_MAX]``; a weight sitting
        at the floor is treated as deterministic (scale exactly zero).
        """
        ls = self.weight_log_std
        std = np.exp(np.clip(ls, LOG_STD_MIN, LOG_STD_MAX))
        return np.where(ls <= LOG_STD_MIN, 0, std).astype(ls.dtype)


@dataclass
class StochasticModel:
    layers: list[StochasticLayer]
    flipout: bool = True

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ValueError(
                    f"layer widths do not compose: {prev.out_features} -> {nxt.in_features}"
                )

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_features

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def dtype(self):
        return self.layers[0].weight_mean.dtype

    def astype(self, dtype) -> "StochasticModel":
        return StochasticModel(
            [
                StochasticLayer(
                    l.weight_mean.astype(dtype),
                    l.weight_log_std.astype(dtype),
                    l.bias.astype(dtype),
                    l.activation,
                )
                for l in self.layers
            ],
            flipout=self.flipout,
        )

    def copy(self) -> "StochasticModel":
        return copy.deepcopy(self)

    def collapse_variance(self) -> "StochasticModel":
        """Return a copy whose weights all sit at the log-std floor."""
        out = self.copy()
        for layer in out.layers:
            layer.weight_log_std[...] = LOG_STD_MIN
        return out


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    kl_weight: float = 1.0
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def init_model(
    sizes: Sequence[int],
    seed: int,
    init_log_std: float = -5.0,
    flipout: bool = True,
    dtype=np.float32,
) -> StochasticModel:
    """He-uniform means, constant log-std, ReLU hidden layers, linear output."""
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError("sizes must list at least an input and an output width")
    if sizes[-1] < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(_seed_seq(seed))
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / fan_in)
        layers.append(
            StochasticLayer(
                weight_mean=rng.uniform(-limit, limit, (fan_out, fan_in)).astype(dtype),
                weight_log_std=np.full((fan_out, fan_in), init_log_std, dtype=dtype),
                bias=np.zeros(fan_out, dtype=dtype),
                activation="identity" if i == len(sizes) - 2 else "relu",
            )
        )
    return StochasticModel(layers, flipout=flipout)


# --------------------------------------------------------------------------
# RNG streams


def _seed_seq(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(key))


def pass_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by ``(seed, *key)``."""
    return np.random.default_rng(_seed_seq(seed, *key))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit child seed addressed by ``(seed, *key)``."""
    return int(_seed_seq(seed, *key).generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# forward / backward


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if logits.shape[-1] < 2:
        raise ValueError("softmax needs at least two logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def draw_noise(model: StochasticModel, batch: int, rng: np.random.Generator) -> list:
    """Draw the per-layer weight noise for one forward pass over ``batch`` rows.

    Flipout: ``(eps, sign_in, sign_out)`` with ``eps`` shared by the batch.
    Independent noise: ``(eps,)`` with one ``eps`` per row.
    All normals come from one draw and all signs from a second.
    """
    dtype = model.dtype
    shapes = [l.weight_mean.shape for l in model.layers]
    reps = 1 if model.flipout else batch
    normals = rng.standard_normal(reps * sum(o * i for o, i in shapes), dtype=dtype)
    if model.flipout:
        bits = rng.integers(0, 2, batch * sum(o + i for o, i in shapes), dtype=np.int8)
        signs = (2 * bits - 1).astype(dtype)
    noise = []
    pos = spos = 0
    for o, i in shapes:
        size = reps * o * i
        if model.flipout:
            eps = normals[pos : pos + size].reshape(o, i)
            s_in = signs[spos : spos + batch * i].reshape(batch, i)
            spos += batch * i
            s_out = signs[spos : spos + batch * o].reshape(batch, o)
            spos += batch * o
            noise.append((eps, s_in, s_out))
        else:
            noise.append((normals[pos : pos + size].reshape(batch, o, i),))
        pos += size
    return noise


def _as_batch(model: StochasticModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=model.dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.in_features:
        raise ValueError(
            f"input shape {x.shape} does not match first layer width {model.in_features}"
        )
    return x, single


def _forward(model: StochasticModel, x: np.ndarray, noise):
    """Return logits and a cache for ``_backward``; ``noise=None`` uses mean weights."""
    cache = []
    h = x
    for k, layer in enumerate(model.layers):
        a = h @ layer.weight_mean.T + layer.bias
        std = None
        if noise is not None:
            std = layer.weight_std()
            if model.flipout:
                eps, s_in, s_out = noise[k]
                a = a + ((h * s_in) @ (std * eps).T) * s_out
            else:
                (eps,) = noise[k]
                a = a + np.einsum("boi,bi->bo", std * eps, h)
        cache.append((h, a, std))
        h = np.maximum(a, 0) if layer.activation == "relu" else a
    return h, cache


def _backward(model: StochasticModel, cache, noise, dlogits: np.ndarray) -> list:
    grads = [None] * len(model.layers)
    delta = dlogits
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        h, a, std = cache[k]
        if layer.activation == "relu":
            delta = delta * (a > 0)
        g_mean = delta.T @ h
        g_bias = delta.sum(axis=0)
        g_log_std = np.zeros_like(layer.weight_log_std)
        dh = delta @ layer.weight_mean
        if noise is not None:
            live = (layer.weight_log_std > LOG_STD_MIN) & (layer.weight_log_std < LOG_STD_MAX)
            if model.flipout:
                eps, s_in, s_out = noise[k]
                d_out = delta * s_out
                g_pert = d_out.T @ (h * s_in)
                g_log_std = g_pert * eps * std * live
                dh = dh + (d_out @ (std * eps)) * s_in
            else:
                (eps,) = noise[k]
                g_pert = np.einsum("bo,bi,boi->oi", delta, h, eps)
                g_log_std = g_pert * std * live
                dh = dh + np.einsum("bo,boi->bi", delta, std * eps)
        grads[k] = (g_mean, g_log_std, g_bias)
        delta = dh
    return grads


def forward_sample(model: StochasticModel, x, rng: np.random.Generator) -> np.ndarray:
    """Softmax scores from one stochastic pass; ``x`` is a vector or a batch."""
    xb, single = _as_batch(model, x)
    logits, _ = _forward(model, xb, draw_noise(model, xb.shape[0], rng))
    probs = softmax(logits)
    return probs[0] if single else probs


def forward_deterministic(model: StochasticModel, x) -> np.ndarray:
    xb, single = _as_batch(model, x)
    logits, _ = _forward(model, xb, None)
    probs = softmax(logits)
    return probs[0] if single else probs


def logits_sample(model: StochasticModel, x, rng: np.random.Generator) -> np.ndarray:
    xb, single = _as_batch(model, x)
    logits, _ = _forward(model, xb, draw_noise(model, xb.shape[0], rng))
    return logits[0] if single else logits


def _forward_passes(model: StochasticModel, x: np.ndarray, noises: list) -> np.ndarray:
    """Logits of one input under ``len(noises)`` independent weight samples.

    ``noises[p]`` is ``draw_noise(model, 1, rng_p)``; the passes are stacked
    and pushed through together.
    """
    n = len(noises)
    h = np.broadcast_to(x, (n, x.shape[0]))
    for k, layer in enumerate(model.layers):
        std = layer.weight_std()
        a = h @ layer.weight_mean.T + layer.bias
        eps = np.stack([nz[k][0] for nz in noises]).reshape(n, *layer.weight_mean.shape)
        pert = std * eps
        if model.flipout:
            s_in = np.concatenate([nz[k][1] for nz in noises])
            s_out = np.concatenate([nz[k][2] for nz in noises])
            a = a + np.einsum("ni,noi->no", h * s_in, pert) * s_out
        else:
            a = a + np.einsum("ni,noi->no", h, pert)
        h = np.maximum(a, 0) if layer.activation == "relu" else a
    return h


def sample_runs(
    model: StochasticModel,
    x,
    n: int,
    seed: int,
    workers: int = 1,
    score_space: str = "softmax",
) -> np.ndarray:
    """Run one input through the network ``n`` times; returns an ``n x N`` matrix.

    Pass ``i`` draws its weights from the stream ``(seed, i)``, so the matrix
    does not depend on how passes are scheduled across ``workers`` threads.
    """
    if n < 2:
        raise ValueError("need at least two passes for a standard deviation")
    if score_space not in ("softmax", "logit"):
        raise ValueError(f"unknown score space {score_space!r}")
    x, single = _as_batch(model, x)
    if not single:
        raise ValueError("sample_runs takes a single flattened input")

    def one(i: int) -> list:
        return draw_noise(model, 1, pass_rng(seed, i))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            noises = list(pool.map(one, range(n)))
    else:
        noises = [one(i) for i in range(n)]
    logits = _forward_passes(model, x[0], noises)
    return softmax(logits) if score_space == "softmax" else logits


# --------------------------------------------------------------------------
# objective


def kl_to_prior(layer: StochasticLayer) -> float:
    """KL(N(mean, std^2) || N(0, 1)) summed over the layer's weights.

    Uses the clamped log-std, so a floored weight contributes a finite amount.
    """
    mu = layer.weight_mean.astype(np.float64)
    ls = np.clip(layer.weight_log_std.astype(np.float64), LOG_STD_MIN, LOG_STD_MAX)
    return float(np.sum(0.5 * (mu**2 + np.exp(2 * ls) - 1.0) - ls))


def _kl_grads(layer: StochasticLayer):
    ls = layer.weight_log_std
    live = (ls > LOG_STD_MIN) & (ls < LOG_STD_MAX)
    var = np.exp(2 * np.clip(ls, LOG_STD_MIN, LOG_STD_MAX))
    return layer.weight_mean, (var - 1.0) * live


def loss_and_grads(
    model: StochasticModel,
    x: np.ndarray,
    y: np.ndarray,
    noise,
    kl_weight: float,
    dataset_size: int,
):
    """Mean cross-entropy of one pass plus ``kl_weight * KL / dataset_size``.

    ``noise`` comes from ``draw_noise`` (or ``None`` for the mean-weight path).
    Returns ``(loss, grads)`` with grads a list of ``(d_mean, d_log_std, d_bias)``.
    """
    logits, cache = _forward(model, x, noise)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = x.shape[0]
    ce = -logp[np.arange(b), y].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(b), y] -= 1
    dlogits /= b
    grads = _backward(model, cache, noise, dlogits)
    loss = float(ce)
    if kl_weight:
        scale = kl_weight / dataset_size
        loss += scale * sum(kl_to_prior(l) for l in model.layers)
        for k, layer in enumerate(model.layers):
            gm, gl = _kl_grads(layer)
            g_mean, g_log_std, g_bias = grads[k]
            grads[k] = (g_mean + scale * gm, g_log_std + scale * gl, g_bias)
    return loss, grads


def train(
    model: StochasticModel,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> StochasticModel:
    """Mini-batch SGD (with optional momentum) on a copy of ``model``.

    One weight sample per step. Fully determined by ``config.seed``.
    ``on_epoch(epoch, mean_loss)`` is called after every epoch.
    """
    x = np.asarray(x, dtype=model.dtype).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if len(y) != len(x):
        raise ValueError("inputs and labels differ in length")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError("label out of range")
    model = model.copy()
    rng = np.random.default_rng(_seed_seq(config.seed))
    velocity = [
        [np.zeros_like(p) for p in (l.weight_mean, l.weight_log_std, l.bias)]
        for l in model.layers
    ]
    m = len(x)
    for epoch in range(config.epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, config.batch_size):
            idx = order[start : start + config.batch_size]
            noise = draw_noise(model, len(idx), rng)
            loss, grads = loss_and_grads(model, x[idx], y[idx], noise, config.kl_weight, m)
            total += loss * len(idx)
            for layer, vel, g in zip(model.layers, velocity, grads):
                params = (layer.weight_mean, layer.weight_log_std, layer.bias)
                for p, v, gp in zip(params, vel, g):
                    v *= config.momentum
                    v -= config.learning_rate * gp.astype(p.dtype)
                    p += v
            for layer in model.layers:
                np.clip(layer.weight_log_std, LOG_STD_MIN, LOG_STD_MAX, out=layer.weight_log_std)
        if on_epoch is not None:
            on_epoch(epoch, total / m)
    return model


def predict(model: StochasticModel, x) -> np.ndarray:
    """Argmax class of the mean-weight path."""
    return forward_deterministic(model, x).argmax(axis=-1)


# --------------------------------------------------------------------------
# checkpoint file

MODEL_MAGIC = b"ZSELMDL1"
_ACT_TAGS = {"identity": 0, "relu": 1}


def save_model(model: StochasticModel, path) -> None:
    """Write the binary checkpoint (little-endian, f32 payloads)."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(model.layers)))
        for layer in model.layers:
            o, i = layer.weight_mean.shape
            fh.write(struct.pack("<IIB", o, i, _ACT_TAGS[layer.activation]))
            for arr in (layer.weight_mean, layer.weight_log_std, layer.bias):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        fh.write(struct.pack("<B", 1 if model.flipout else 0))


def load_model(path) -> StochasticModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MODEL_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    tags = {v: k for k, v in _ACT_TAGS.items()}
    (count,) = struct.unpack_from("<I", buf, 8)
    pos = 12
    layers = []
    try:
        for _ in range(count):
            o, i, tag = struct.unpack_from("<IIB", buf, pos)
            pos += 9
            arrays = []
            for size in (o * i, o * i, o):
                arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos)
                arrays.append(arr.astype(np.float32))
                pos += 4 * size
            if tag not in tags:
                raise ValueError(f"unknown activation tag {tag}")
            layers.append(
                StochasticLayer(
                    arrays[0].reshape(o, i), arrays[1].reshape(o, i), arrays[2], tags[tag]
                )
            )
        (flag,) = struct.unpack_from("<B", buf, pos)
    except struct.error as exc:
        raise ValueError("truncated model checkpoint") from exc
    if pos + 1 != len(buf):
        raise ValueError("trailing bytes after model checkpoint")
    return StochasticModel(layers, flipout=bool(flag))
