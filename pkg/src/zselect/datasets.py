"""Desk-scale data: Gaussian blobs, CIFAR-10 binaries, class-exclusion splits,
and the float container used to carry distorted images between commands.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
CONTAINER_MAGIC = b"ZSELDS1"


@dataclass
class Dataset:
    """Images ``(M, C, H, W)`` float32 with integer labels.

    ``source_labels[k]`` is the original class id of label ``k`` after a
    split re-indexes labels; ``None`` means labels are original.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    source_labels: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError("images must be (M, C, H, W)")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label exceeds class count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), int(np.prod(self.image_shape)))

    def subset(self, idx) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class SplitSpec:
    excluded_classes: frozenset[int] = frozenset()
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "excluded_classes", frozenset(self.excluded_classes))
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def gen_blobs(
    num_classes: int,
    dims: int,
    samples_per_class: int,
    separation: float,
    noise_sigma: float,
    seed: int,
    image_shape: tuple[int, int, int] | None = None,
    basis: np.ndarray | None = None,
) -> Dataset:
    """Isotropic Gaussian classes centred on the vertices of a regular simplex.

    Centre ``k`` is ``separation / sqrt(2) * basis[k]`` so every pair of
    centres is ``separation`` apart. ``basis`` must have orthonormal rows and
    defaults to the coordinate axes. Samples are grouped by class.
    """
    if num_classes < 2 or dims < num_classes:
        raise ValueError("need 2 <= num_classes <= dims")
    if samples_per_class <= 0 or noise_sigma < 0:
        raise ValueError("samples_per_class must be positive and noise_sigma >= 0")
    shape = image_shape or (1, 1, dims)
    if int(np.prod(shape)) != dims:
        raise ValueError(f"image_shape {shape} does not hold {dims} values")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))
    centers = blob_centers(num_classes, dims, separation, basis)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    points = centers[labels] + noise_sigma * rng.standard_normal((len(labels), dims))
    return Dataset(
        points.astype(np.float32).reshape(len(labels), *shape),
        labels.astype(np.uint16),
        num_classes,
    )


def blob_centers(
    num_classes: int, dims: int, separation: float, basis: np.ndarray | None = None
) -> np.ndarray:
    if basis is None:
        basis = np.eye(num_classes, dims)
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape != (num_classes, dims):
        raise ValueError(f"basis must be ({num_classes}, {dims})")
    if not np.allclose(basis @ basis.T, np.eye(num_classes), atol=1e-9):
        raise ValueError("basis rows must be orthonormal")
    return separation / np.sqrt(2.0) * basis


def quadrant_basis(image_shape: tuple[int, int, int]) -> np.ndarray:
    """Four orthonormal patterns, each a uniform patch over one image quadrant."""
    c, h, w = image_shape
    if h % 2 or w % 2:
        raise ValueError("quadrant basis needs even height and width")
    rows = []
    for qy in range(2):
        for qx in range(2):
            m = np.zeros(image_shape)
            m[:, qy * h // 2 : (qy + 1) * h // 2, qx * w // 2 : (qx + 1) * w // 2] = 1.0
            rows.append(m.ravel() / np.linalg.norm(m))
    return np.array(rows)


# --------------------------------------------------------------------------
# CIFAR-10 binary


def read_cifar10(path) -> Dataset:
    """Read a CIFAR-10 ``*.bin`` batch: 1 label byte + 3072 planar RGB bytes per record."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.uint16)
    if labels.size and labels.max() > 9:
        raise ValueError(f"{path}: label byte {labels.max()} > 9")
    images = (rec[:, 1:].astype(np.float32) / np.float32(255)).reshape(-1, 3, 32, 32)
    return Dataset(images, labels, 10)


def read_cifar10_dir(path) -> Dataset:
    """All ``data_batch_*.bin`` files followed by ``test_batch.bin``."""
    path = Path(path)
    files = sorted(path.glob("data_batch_*.bin")) + sorted(path.glob("test_batch.bin"))
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 batches under {path}")
    parts = [read_cifar10(f) for f in files]
    return Dataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        10,
    )


# --------------------------------------------------------------------------
# float container: magic, u32 count, u32 C, H, W, then per record u16 label + f32 pixels


def write_container(ds: Dataset, path) -> None:
    m = len(ds)
    c, h, w = ds.image_shape
    rec = np.dtype([("label", "<u2"), ("pixels", "<f4", (c * h * w,))])
    body = np.empty(m, dtype=rec)
    body["label"] = ds.labels
    body["pixels"] = ds.images.reshape(m, c * h * w)
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<IIII", m, c, h, w))
        fh.write(body.tobytes())


def read_container(path, num_classes: int | None = None) -> Dataset:
    buf = Path(path).read_bytes()
    if not buf.startswith(CONTAINER_MAGIC):
        raise ValueError(f"{path}: not a dataset container (bad magic)")
    off = len(CONTAINER_MAGIC)
    m, c, h, w = struct.unpack_from("<IIII", buf, off)
    off += 16
    rec = np.dtype([("label", "<u2"), ("pixels", "<f4", (c * h * w,))])
    if len(buf) - off != m * rec.itemsize:
        raise ValueError(f"{path}: container body length does not match header")
    body = np.frombuffer(buf, dtype=rec, count=m, offset=off)
    labels = body["label"].astype(np.uint16)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if m else 0
    return Dataset(
        body["pixels"].astype(np.float32).reshape(m, c, h, w), labels, num_classes
    )


def load_dataset(path) -> Dataset:
    """Dispatch on what ``path`` holds: CIFAR directory, container, or CIFAR batch."""
    path = Path(path)
    if path.is_dir():
        return read_cifar10_dir(path)
    with open(path, "rb") as fh:
        head = fh.read(len(CONTAINER_MAGIC))
    if head == CONTAINER_MAGIC:
        return read_container(path)
    return read_cifar10(path)


# --------------------------------------------------------------------------
# splits


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into ``(train, test_in, test_out)``.

    Excluded classes all go to ``test_out`` (original labels kept). The kept
    samples are shuffled and cut at ``train_fraction``; their labels are
    re-indexed densely and the mapping recorded in ``source_labels``.
    """
    excluded = set(spec.excluded_classes)
    if any(c < 0 or c >= ds.num_classes for c in excluded):
        raise ValueError("excluded class id out of range")
    kept_classes = [c for c in range(ds.num_classes) if c not in excluded]
    if not kept_classes:
        raise ValueError("cannot exclude every class")
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed) & (2**64 - 1)))
    is_out = np.isin(ds.labels, sorted(excluded))
    kept = np.flatnonzero(~is_out)
    out = np.flatnonzero(is_out)
    kept = kept[rng.permutation(len(kept))]
    out = out[rng.permutation(len(out))]
    n_train = int(round(spec.train_fraction * len(kept)))

    remap = np.zeros(ds.num_classes, dtype=np.uint16)
    remap[kept_classes] = np.arange(len(kept_classes))
    source = tuple(
        ds.source_labels[c] if ds.source_labels else c for c in kept_classes
    )

    def _kept(idx):
        return Dataset(
            ds.images[idx], remap[ds.labels[idx]], len(kept_classes), source
        )

    return _kept(kept[:n_train]), _kept(kept[n_train:]), ds.subset(out)
