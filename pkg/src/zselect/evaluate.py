"""Threshold sweeps, ROC curves and valid-region AUROC.

Conventions: out-of-distribution samples are negatives and any accepted
negative is a false positive. In-distribution samples are positives; an
accepted positive is a true positive only when its predicted class matches
its label (``require_correct=False`` counts every accepted positive).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

METHODS = ("ztest", "sr")
SR_VALID_CAP = 1.0 - 1e-9


@dataclass(frozen=True)
class EvalSample:
    confidence: float
    predicted: int | None
    label: int | None  # None marks an out-of-distribution sample

    @property
    def in_distribution(self) -> bool:
        return self.label is not None


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float
    valid: bool = True


@dataclass
class RocCurve:
    points: list[RocPoint]
    method: str

    def valid_points(self) -> list[RocPoint]:
        return [p for p in self.points if p.valid]

    def min_valid_fpr(self) -> float:
        return min(p.fpr for p in self.valid_points())


def label_samples(decisions, ground_truth: Sequence[int | None]) -> list[EvalSample]:
    """Pair decisions with truth labels (``None`` = out-of-distribution)."""
    decisions = list(decisions)
    if len(decisions) != len(ground_truth):
        raise ValueError("decisions and ground truth differ in length")
    out = []
    for d, truth in zip(decisions, ground_truth):
        if math.isnan(d.confidence) or d.confidence == -math.inf:
            raise ValueError("confidence must be finite or +inf")
        out.append(EvalSample(float(d.confidence), d.predicted, truth))
    return out


def _thresholds(conf: np.ndarray, method: str) -> np.ndarray:
    cand = np.concatenate([conf[np.isfinite(conf)], [0.0]])
    if method == "sr":
        # thresholds at 1 are folded into the reject-all point
        cand = cand[cand < 1.0]
    return np.unique(cand)[::-1]


def sweep_roc(
    samples: Sequence[EvalSample], method: str, require_correct: bool = True
) -> RocCurve:
    """One ROC point per candidate threshold, ordered by decreasing threshold.

    Candidates are the distinct finite confidences plus the domain endpoints.
    The first point is the reject-all operating point at the top of the
    domain (1 for ``sr``, +inf for ``ztest``); it is valid only for ``ztest``.
    ``sr`` points at thresholds >= ``SR_VALID_CAP`` are marked invalid.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if not samples:
        raise ValueError("no samples to sweep")
    conf = np.array([s.confidence for s in samples], dtype=np.float64)
    pos = np.array([s.in_distribution for s in samples])
    hit = pos.copy()
    if require_correct:
        hit &= np.array([s.predicted is not None and s.predicted == s.label for s in samples])
    n_pos = int(pos.sum())
    n_neg = len(samples) - n_pos

    thresholds = _thresholds(conf, method)
    # count of accepted samples at threshold t = number with confidence >= t
    neg_conf = np.sort(conf[~pos])
    hit_conf = np.sort(conf[hit])
    fp = len(neg_conf) - np.searchsorted(neg_conf, thresholds, side="left")
    tp = len(hit_conf) - np.searchsorted(hit_conf, thresholds, side="left")
    fpr = fp / n_neg if n_neg else np.zeros(len(thresholds))
    tpr = tp / n_pos if n_pos else np.zeros(len(thresholds))

    top = 1.0 if method == "sr" else math.inf
    points = [RocPoint(top, 0.0, 0.0, valid=method == "ztest")]
    for t, f, r in zip(thresholds, fpr, tpr):
        valid = method == "ztest" or t < SR_VALID_CAP
        points.append(RocPoint(float(t), float(f), float(r), valid))
    return RocCurve(points, method)


def auroc_valid(curve: RocCurve) -> float:
    """Trapezoidal area over the valid points only; no extrapolation."""
    if not curve.points:
        raise ValueError("empty curve")
    pts = sorted((p.fpr, p.tpr) for p in curve.valid_points())
    if len(pts) < 2:
        return 0.0
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))


# --------------------------------------------------------------------------
# reports

REPORT_HEADER = ("method", "distortion", "auroc_valid")
CURVE_HEADER = ("method", "distortion", "threshold", "fpr", "tpr")


@dataclass
class CurveResult:
    method: str
    distortion: str
    curve: RocCurve

    @property
    def auroc(self) -> float:
        return auroc_valid(self.curve)


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def report(
    results: Iterable[CurveResult],
    path,
    curves_path=None,
    header_lines: Sequence[str] = (),
    stream=None,
) -> list[dict]:
    """Write the AUROC summary (and optionally every curve) as CSV.

    ``header_lines`` are emitted first as ``#`` comments. Returns the summary
    rows; if ``stream`` is given, a proposed-vs-SR table is printed to it.
    """
    results = list(results)
    rows = [
        {"method": r.method, "distortion": r.distortion, "auroc_valid": r.auroc}
        for r in results
    ]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in rows:
            w.writerow([row["method"], row["distortion"], f"{row['auroc_valid']:.6f}"])
    if curves_path is not None:
        with open(curves_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            for r in results:
                for p in r.curve.points:
                    w.writerow([r.method, r.distortion, _fmt(p.threshold), _fmt(p.fpr), _fmt(p.tpr)])
    if stream is not None:
        print(comparison_table(rows), file=stream)
    return rows


def comparison_table(rows: Sequence[dict]) -> str:
    by = {}
    for row in rows:
        by.setdefault(row["distortion"], {})[row["method"]] = row["auroc_valid"]
    lines = [f"{'distortion':<16}{'ztest':>10}{'sr':>10}{'gap':>10}"]
    for dist, vals in by.items():
        z, s = vals.get("ztest"), vals.get("sr")
        cells = [f"{v:>10.4f}" if v is not None else f"{'-':>10}" for v in (z, s)]
        gap = f"{z - s:>+10.4f}" if z is not None and s is not None else f"{'-':>10}"
        lines.append(f"{dist:<16}{''.join(cells)}{gap}")
    return "\n".join(lines)


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [
        {**row, "auroc_valid": float(row["auroc_valid"])} for row in csv.DictReader(lines)
    ]
