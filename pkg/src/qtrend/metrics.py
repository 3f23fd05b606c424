"""Scores for trend estimates and binary signal classifications."""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DimensionError


def _labels(a, name="labels"):
    a = np.asarray(a).reshape(-1)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be 0/1")
    return a.astype(np.int8)


def rmse(est, truth):
    est = np.asarray(est, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if est.shape != truth.shape:
        raise DimensionError(f"lengths differ: {est.size} vs {truth.size}")
    return float(np.sqrt(np.mean((est - truth) ** 2)))


@dataclass(frozen=True)
class ContingencyCounts:
    """Joint proportions r[j, k] of (a = j, b = k) and their marginals."""

    r: np.ndarray
    n: int

    @classmethod
    def from_labels(cls, a, b):
        a, b = _labels(a, "a"), _labels(b, "b")
        if a.shape != b.shape:
            raise DimensionError(f"lengths differ: {a.size} vs {b.size}")
        counts = np.zeros((2, 2))
        np.add.at(counts, (a, b), 1.0)
        return cls(counts / a.size, a.size)

    @property
    def row(self):
        return self.r.sum(axis=1)

    @property
    def col(self):
        return self.r.sum(axis=0)


def caa(truth, est):
    """Class-averaged accuracy: mean of sensitivity and specificity."""
    t, e = _labels(truth, "truth"), _labels(est, "est")
    if t.shape != e.shape:
        raise DimensionError(f"lengths differ: {t.size} vs {e.size}")
    pos = t == 1
    if pos.all() or not pos.any():
        raise ValueError("both classes must be present in the truth labels")
    sens = np.count_nonzero(e[pos] == 1) / np.count_nonzero(pos)
    spec = np.count_nonzero(e[~pos] == 0) / np.count_nonzero(~pos)
    return 0.5 * (sens + spec)


def vi(a, b):
    """Variation of information between two binary classifications (nats)."""
    c = ContingencyCounts.from_labels(a, b)
    row, col = c.row, c.col
    total = 0.0
    for j in range(2):
        for k in range(2):
            r = c.r[j, k]
            if r > 0.0:
                total -= r * (math.log(r / row[j]) + math.log(r / col[k]))
    return max(total, 0.0)


def classify(y, theta_col, threshold):
    """1 where the detrended value y - theta exceeds ``threshold``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    theta_col = np.asarray(theta_col, dtype=float).reshape(-1)
    if y.shape != theta_col.shape:
        raise DimensionError(f"lengths differ: {y.size} vs {theta_col.size}")
    return ((y - theta_col) > threshold).astype(np.int8)


def nearest_rank(values, q):
    """Nearest-rank empirical quantile: the ceil(q n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float)[np.isfinite(values)])
    if v.size == 0:
        raise ValueError("no finite values")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    rank = max(1, math.ceil(q * v.size))
    return float(v[rank - 1])


def quantile_thresholds(y, theta_col, levels=(0.90, 0.95, 0.99)):
    """Thresholds at empirical quantiles of the detrended series."""
    resid = np.asarray(y, dtype=float) - np.asarray(theta_col, dtype=float)
    return [nearest_rank(resid, q) for q in levels]
