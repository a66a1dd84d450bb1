"""Accept/reject decisions from repeated stochastic passes.

The proposed rule: take per-class mean and sample std over ``n`` passes, pick
the class with the highest mean, and run a two-sample Z-test between it and
every other class. The prediction is kept only if every Z clears the
threshold. Softmax Response (``sr_decide``) is the single-pass baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SOFTMAX_ROW_TOL = 1e-5


@dataclass(frozen=True)
class ClassStats:
    mean: np.ndarray
    std: np.ndarray
    n: int

    @property
    def num_classes(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class DecisionConfig:
    z_threshold: float = 1.96
    delta: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.z_threshold) or self.z_threshold < 0:
            raise ValueError("z_threshold must be finite and >= 0")


@dataclass(frozen=True)
class Decision:
    """``label`` is the accepted class, or ``None`` for Reject.

    ``predicted`` is the candidate class regardless of the outcome and
    ``confidence`` the scalar swept when building ROC curves.
    """

    label: int | None
    predicted: int
    confidence: float

    @property
    def accepted(self) -> bool:
        return self.label is not None


def check_score_matrix(m, softmax: bool = True) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("score matrix must be 2-D (passes x classes)")
    if m.shape[0] < 2:
        raise ValueError("need at least two passes for a standard deviation")
    if m.shape[1] < 2:
        raise ValueError("need at least two classes")
    if not np.all(np.isfinite(m)):
        raise ValueError("score matrix contains non-finite values")
    if softmax and np.any(np.abs(m.sum(axis=1) - 1.0) > SOFTMAX_ROW_TOL):
        raise ValueError("softmax score rows must sum to 1")
    return m


def class_stats(m) -> ClassStats:
    """Column means and sample (n-1) standard deviations."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("need at least two passes for a standard deviation")
    std = m.std(axis=0, ddof=1)
    # a constant column has no spread; don't let rounding in the mean invent one
    std[m.min(axis=0) == m.max(axis=0)] = 0.0
    return ClassStats(mean=m.mean(axis=0), std=std, n=m.shape[0])


def z_statistic(mu1, sigma1, mu2, sigma2, n1, n2, delta=0.0):
    """Two-sample Z score ``(mu1 - mu2 - delta) / sqrt(s1^2/n1 + s2^2/n2)``.

    With both sigmas zero the result is +inf/-inf by the sign of the
    numerator and 0 on an exact tie. Broadcasts over array arguments.
    """
    if np.any(np.asarray(n1) < 2) or np.any(np.asarray(n2) < 2):
        raise ValueError("sample sizes must be at least 2")
    if np.any(np.asarray(sigma1) < 0) or np.any(np.asarray(sigma2) < 0):
        raise ValueError("standard deviations must be non-negative")
    num = np.asarray(mu1, dtype=np.float64) - mu2 - delta
    den = np.sqrt(np.asarray(sigma1, dtype=np.float64) ** 2 / n1 + np.asarray(sigma2) ** 2 / n2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.sign(num) * np.inf)
    z = np.where((den == 0) & (num == 0), 0.0, z)
    return float(z) if z.ndim == 0 else z


def decide(stats: ClassStats, cfg: DecisionConfig = DecisionConfig()) -> Decision:
    """Accept the top-mean class iff its Z against every other class is >= z."""
    if stats.num_classes < 2:
        raise ValueError("need at least two classes")
    top = int(np.argmax(stats.mean))  # first maximum wins ties
    others = np.arange(stats.num_classes) != top
    z = z_statistic(
        stats.mean[top], stats.std[top], stats.mean[others], stats.std[others],
        stats.n, stats.n, cfg.delta,
    )
    confidence = float(np.min(z))
    label = top if confidence >= cfg.z_threshold else None
    return Decision(label=label, predicted=top, confidence=confidence)


def ztest_confidence(m, delta: float = 0.0) -> tuple[int, float]:
    """``(candidate class, min Z)`` for a score matrix; the ROC sweep statistic."""
    d = decide(class_stats(m), DecisionConfig(0.0, delta))
    return d.predicted, d.confidence


def sr_decide(probs, threshold: float) -> Decision:
    """Softmax Response: accept the argmax iff its probability is >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("softmax threshold must lie in [0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    top = int(np.argmax(probs))
    confidence = float(probs[top])
    # a softmax output never exceeds 1, so threshold 1 is the reject-all setting
    accept = confidence >= threshold and threshold < 1.0
    return Decision(label=top if accept else None, predicted=top, confidence=confidence)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    if not math.isfinite(x):
        raise ValueError("normal_cdf needs a finite argument")
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# --------------------------------------------------------------------------
# interchange file: first line "n,N", then n rows of N floats


def write_score_matrix(m, path) -> None:
    m = np.asarray(m, dtype=np.float64)
    lines = [f"{m.shape[0]},{m.shape[1]}"]
    lines += [",".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_score_matrix(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty score matrix file")
    try:
        n, k = (int(v) for v in lines[0].split(","))
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise ValueError(f"malformed score matrix file: {exc}") from exc
    if len(rows) != n or any(len(r) != k for r in rows):
        raise ValueError(f"score matrix file does not match its {n}x{k} header")
    return np.array(rows, dtype=np.float64)
