"""Test-time image corruptions: blur, noise, gamma and occlusion.

Images are float arrays ``(C, H, W)`` in ``[0, 1]``. Convolutions clamp to
the edge. Stochastic operators take an explicit seed and are pure functions
of ``(img, params, seed)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

KINDS = (
    "motion_blur",
    "frosted_glass",
    "gaussian_blur",
    "gaussian_noise",
    "salt_pepper",
    "gamma",
    "occlusion",
)
STOCHASTIC = {"frosted_glass", "gaussian_noise", "salt_pepper"}

DEFAULT_PARAMS = {
    "motion_blur": {"length": 9, "angle": 0.0},
    "frosted_glass": {"radius": 2},
    "gaussian_blur": {"sigma": 1.5},
    "gaussian_noise": {"sigma": 0.05},
    "salt_pepper": {"p": 0.05},
    # out = in ** gamma: gamma > 1 darkens, gamma < 1 lightens
    "gamma": {"gamma": 2.0},
    # x, y, w, h default to a centred patch covering `area` of the image
    "occlusion": {"area": 0.25},
}


def _check(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError("image must be (C, H, W) with C in {1, 3}")
    return img


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))


def motion_kernel(length: int, angle_degrees: float) -> np.ndarray:
    """Normalised one-pixel-wide line of ``length`` taps through the kernel centre."""
    if length < 1 or length % 2 == 0:
        raise ValueError("motion blur length must be an odd positive integer")
    c = (length - 1) // 2
    theta = math.radians(angle_degrees)
    k = np.zeros((length, length))
    for t in np.arange(-c, c + 1):
        row = int(round(c - t * math.sin(theta)))
        col = int(round(c + t * math.cos(theta)))
        k[row, col] = 1.0
    return k / k.sum()


def _convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = np.empty(img.shape, dtype=np.float64)
    for ch in range(img.shape[0]):
        out[ch] = ndimage.correlate(img[ch].astype(np.float64), kernel, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def motion_blur(img, length: int = 9, angle_degrees: float = 0.0) -> np.ndarray:
    img = _check(img)
    if length == 1:
        return img.copy()
    return _convolve(img, motion_kernel(length, angle_degrees))


def frosted_glass(img, radius: int = 2, seed: int = 0) -> np.ndarray:
    """Replace each pixel by a random pixel within Chebyshev distance ``radius``."""
    img = _check(img)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return img.copy()
    _, h, w = img.shape
    rng = _rng(seed)
    dy = rng.integers(-radius, radius + 1, (h, w))
    dx = rng.integers(-radius, radius + 1, (h, w))
    rows = np.clip(np.arange(h)[:, None] + dy, 0, h - 1)
    cols = np.clip(np.arange(w)[None, :] + dx, 0, w - 1)
    return img[:, rows, cols]


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float = 1.5) -> np.ndarray:
    """Separable Gaussian, radius ``ceil(3 sigma)``, renormalised after truncation."""
    img = _check(img)
    if not sigma > 0:
        raise ValueError("gaussian blur sigma must be > 0")
    k = gaussian_kernel1d(sigma)
    out = np.empty(img.shape, dtype=np.float64)
    for ch in range(img.shape[0]):
        tmp = ndimage.correlate1d(img[ch].astype(np.float64), k, axis=0, mode="nearest")
        out[ch] = ndimage.correlate1d(tmp, k, axis=1, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def gaussian_noise(img, sigma: float = 0.05, seed: int = 0) -> np.ndarray:
    img = _check(img)
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    noise = _rng(seed).standard_normal(img.shape)
    return np.clip(img + sigma * noise, 0.0, 1.0).astype(img.dtype)


def salt_pepper(img, p: float = 0.05, seed: int = 0) -> np.ndarray:
    """With probability ``p`` per pixel, set every channel to 0 or 1 (even odds)."""
    img = _check(img)
    if not 0.0 <= p <= 1.0:
        raise ValueError("salt-and-pepper probability must lie in [0, 1]")
    _, h, w = img.shape
    rng = _rng(seed)
    hit = rng.random((h, w)) < p
    salt = rng.random((h, w)) < 0.5
    out = img.copy()
    out[:, hit] = salt[hit].astype(img.dtype)
    return out


def gamma_correct(img, gamma: float = 2.0) -> np.ndarray:
    img = _check(img)
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    return np.power(img, gamma).astype(img.dtype)


def occlude(img, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Black out the rectangle ``[y, y+h) x [x, x+w)`` clipped to the image."""
    img = _check(img)
    if w < 0 or h < 0:
        raise ValueError("occlusion width and height must be >= 0")
    _, hh, ww = img.shape
    out = img.copy()
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, ww), min(y + h, hh)
    if x1 > x0 and y1 > y0:
        out[:, y0:y1, x0:x1] = 0
    return out


def centered_patch(height: int, width: int, area: float) -> tuple[int, int, int, int]:
    """``(x, y, w, h)`` of a centred rectangle covering ``area`` of the image."""
    if not 0.0 <= area <= 1.0:
        raise ValueError("occlusion area must lie in [0, 1]")
    scale = math.sqrt(area)
    w = int(round(width * scale))
    h = int(round(height * scale))
    return (width - w) // 2, (height - h) // 2, w, h


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        allowed = set(DEFAULT_PARAMS[self.kind])
        if self.kind == "occlusion":
            allowed |= {"x", "y", "w", "h"}
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def resolved(self) -> dict:
        return {**DEFAULT_PARAMS[self.kind], **self.params}


def parse_distortion(text: str, seed: int = 0) -> DistortionSpec:
    """Parse ``kind=gamma,gamma=0.5`` (or a bare kind name) into a spec."""
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty distortion spec")
    fields = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            if fields:
                raise ValueError(f"malformed distortion item {item!r}")
            fields["kind"] = key
        else:
            fields[key.strip()] = value.strip()
    kind = fields.pop("kind", None)
    if kind is None:
        raise ValueError("distortion spec needs kind=...")
    name = fields.pop("name", None)
    seed = int(fields.pop("seed", seed))
    params = {k: _number(v) for k, v in fields.items()}
    return DistortionSpec(kind, params, seed, name)


def _number(v: str):
    try:
        return int(v)
    except ValueError:
        return float(v)


def apply(img, spec: DistortionSpec, seed: int | None = None) -> np.ndarray:
    """Apply ``spec`` to one image; ``seed`` overrides ``spec.seed``."""
    img = _check(img)
    p = spec.resolved()
    seed = spec.seed if seed is None else seed
    if spec.kind == "motion_blur":
        return motion_blur(img, int(p["length"]), float(p["angle"]))
    if spec.kind == "frosted_glass":
        return frosted_glass(img, int(p["radius"]), seed)
    if spec.kind == "gaussian_blur":
        return gaussian_blur(img, float(p["sigma"]))
    if spec.kind == "gaussian_noise":
        return gaussian_noise(img, float(p["sigma"]), seed)
    if spec.kind == "salt_pepper":
        return salt_pepper(img, float(p["p"]), seed)
    if spec.kind == "gamma":
        return gamma_correct(img, float(p["gamma"]))
    _, h, w = img.shape
    if {"x", "y", "w", "h"} <= p.keys():
        rect = (int(p["x"]), int(p["y"]), int(p["w"]), int(p["h"]))
    else:
        rect = centered_patch(h, w, float(p["area"]))
    return occlude(img, *rect)


def apply_batch(images: np.ndarray, spec: DistortionSpec) -> np.ndarray:
    """Distort every image in ``(M, C, H, W)``; image ``j`` uses stream ``(seed, j)``."""
    out = np.empty_like(images)
    for j, img in enumerate(images):
        child = int(np.random.SeedSequence(int(spec.seed) & (2**64 - 1), spawn_key=(j,))
                    .generate_state(1, np.uint64)[0])
        out[j] = apply(img, spec, child)
    return out


def table_suite(seed: int = 0) -> list[DistortionSpec]:
    """The eight corruption columns at default severity."""
    return [
        DistortionSpec("motion_blur", seed=seed, name="motion_blur"),
        DistortionSpec("frosted_glass", seed=seed, name="frosted_glass"),
        DistortionSpec("gaussian_blur", seed=seed, name="gaussian_blur"),
        DistortionSpec("gaussian_noise", seed=seed, name="gaussian_noise"),
        DistortionSpec("salt_pepper", seed=seed, name="salt_pepper"),
        DistortionSpec("gamma", {"gamma": 2.0}, seed, name="gamma_dark"),
        DistortionSpec("gamma", {"gamma": 0.5}, seed, name="gamma_light"),
        DistortionSpec("occlusion", seed=seed, name="occlusion"),
    ]
