"""PLCC, SRCC, mean policy entropy and score histograms."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Correlation requested for fewer than 2 points or a zero-variance vector."""


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64).ravel()
    b = np.asarray(gt, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 samples")
    return a, b


def plcc(pred, gt) -> float:
    """Pearson linear correlation coefficient."""
    a, b = _pair(pred, gt)
    # a constant vector can leave round-off residue after centring
    if a.min() == a.max() or b.min() == b.max():
        raise UndefinedCorrelationError("zero variance in an input vector")
    a = a - a.mean()
    b = b - b.mean()
    # rescale so the sums of squares cannot underflow or overflow
    ma, mb = float(np.abs(a).max()), float(np.abs(b).max())
    if ma == 0.0 or mb == 0.0:
        raise UndefinedCorrelationError("zero variance in an input vector")
    a = a / ma
    b = b / mb
    saa = float(a @ a)
    sbb = float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelationError("zero variance in an input vector")
    r = float(a @ b) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def rankdata(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    a = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(pred, gt) -> float:
    """Spearman rank-order correlation with average ranks for ties."""
    a, b = _pair(pred, gt)
    try:
        return plcc(rankdata(a), rankdata(b))
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError("all values tied in an input vector") from None


def safe_plcc(pred, gt) -> float | None:
    try:
        return plcc(pred, gt)
    except UndefinedCorrelationError:
        return None


def safe_srcc(pred, gt) -> float | None:
    try:
        return srcc(pred, gt)
    except UndefinedCorrelationError:
        return None


def mean_entropy(policy, dataset) -> float:
    from .dataset import as_arrays
    from .policy import entropy_batch, log_probs

    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    x, _ = as_arrays(dataset)
    return float(entropy_batch(log_probs(policy, x)).mean())


@dataclass(frozen=True)
class MetricsReport:
    plcc: float | None
    srcc: float | None
    mean_entropy: float
    n: int
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def metrics_report(pred, gt, mean_entropy: float) -> MetricsReport:
    notes = []
    p = safe_plcc(pred, gt)
    if p is None:
        notes.append("plcc: undefined correlation")
    s = safe_srcc(pred, gt)
    if s is None:
        notes.append("srcc: undefined correlation")
    return MetricsReport(plcc=p, srcc=s, mean_entropy=mean_entropy, n=int(np.size(pred)), note="; ".join(notes))


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path) -> Path:
        """Rows of ``(left_edge, right_edge, count)``."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["left_edge", "right_edge", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return path


def histogram(scores, bins: int) -> Histogram:
    """Equal-width bins on [0, 1]; the last bin includes 1.0."""
    if bins < 1:
        raise ValueError("bins must be positive")
    s = np.asarray(scores, dtype=np.float64).ravel()
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum((s * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return Histogram(bin_edges=edges, counts=counts)
