"""Onset-matching metrics, adjusted Rand index and onset histograms.

Undefined ratios (an empty denominator) are reported as 0 and flagged on
the returned :class:`Metric`, which otherwise behaves like a float.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import comb

import numpy as np

__all__ = [
    "OnsetMatchResult",
    "Metric",
    "match_onsets",
    "precision",
    "recall",
    "onset_entropy",
    "adjusted_rand_index",
    "contingency_table",
    "report_onsets",
    "aggregate_onset_histogram",
    "OnsetHistogram",
    "write_metric_table",
]

DEFAULT_TOLERANCE = 0.5


class Metric(float):
    """A float carrying an ``undefined`` flag."""

    undefined: bool

    def __new__(cls, value, undefined=False):
        obj = super().__new__(cls, value)
        obj.undefined = bool(undefined)
        return obj


@dataclass
class OnsetMatchResult:
    tp: int
    fp: int
    fn: int
    per_level_hits: np.ndarray
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def n_estimated(self) -> int:
        return self.tp + self.fp


def match_onsets(estimated, truth, tol: float = DEFAULT_TOLERANCE) -> OnsetMatchResult:
    """Credit each estimate to the nearest true onset within ``tol``.

    Estimates outside every window are false positives; true onsets that
    collect no estimate are false negatives. Several estimates can hit the
    same level, each counting as a true positive.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if truth.size == 0:
        raise ValueError("truth must be non-empty")
    est = np.asarray(estimated, dtype=float).reshape(-1)
    est = est[~np.isnan(est)]
    hits = np.zeros(truth.size, dtype=int)
    fp = 0
    for e in est:
        dist = np.abs(truth - e)
        j = int(np.argmin(dist))
        if dist[j] <= tol:
            hits[j] += 1
        else:
            fp += 1
    tp = int(hits.sum())
    fn = int(np.count_nonzero(hits == 0))
    return OnsetMatchResult(tp, fp, fn, hits, float(tol))


def precision(r: OnsetMatchResult) -> Metric:
    den = r.tp + r.fp
    return Metric(r.tp / den) if den else Metric(0.0, undefined=True)


def recall(r: OnsetMatchResult) -> Metric:
    den = r.tp + r.fn
    return Metric(r.tp / den) if den else Metric(0.0, undefined=True)


def onset_entropy(per_level_hits, K_norm: int, n_estimated: int | None = None) -> Metric:
    """Normalized entropy of hits across true levels, in bits over ``log2(K_norm)``.

    Probabilities are hits divided by the total number of estimates, which
    defaults to the hit total. With false positives they sum to less than one.
    """
    if K_norm < 2:
        raise ValueError("K_norm must be >= 2")
    hits = np.asarray(per_level_hits, dtype=float).reshape(-1)
    total = float(hits.sum()) if n_estimated is None else float(n_estimated)
    if total <= 0:
        return Metric(0.0, undefined=True)
    p = hits[hits > 0] / total
    return Metric(float(-(p * np.log2(p)).sum() / np.log2(K_norm)))


def contingency_table(labels_a, labels_b) -> np.ndarray:
    a = np.asarray(labels_a).reshape(-1)
    b = np.asarray(labels_b).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected Rand index from the contingency table.

    Pair counts are exact integers; only the final ratio is a float. When
    the expected and maximal indices coincide (both partitions trivial in
    the same way) the partitions agree and 1.0 is returned.
    """
    table = contingency_table(labels_a, labels_b)
    n = int(table.sum())
    if n < 2:
        raise ValueError("need at least two observations")
    index = sum(comb(int(v), 2) for v in table.ravel())
    sum_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    pairs = comb(n, 2)
    # scaled by 2*pairs so that every term stays integral
    num = 2 * (index * pairs - sum_a * sum_b)
    den = (sum_a + sum_b) * pairs - 2 * sum_a * sum_b
    if den == 0:
        return 1.0
    return num / den


def report_onsets(report) -> np.ndarray:
    """K onsets of a fit: the reference component's first hard assignment, then tau."""
    return np.asarray(report.onsets(), dtype=float)


@dataclass
class OnsetHistogram:
    edges: np.ndarray
    mass: np.ndarray
    count: int = 0
    onsets: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_center", "mass"])
            for c, m in zip(self.centers, self.mass):
                w.writerow([repr(float(c)), repr(float(m))])


def aggregate_onset_histogram(reports, bin_width: float, T: float) -> OnsetHistogram:
    """Stack the K onsets of every report into bins over ``[0, T]``, unit mass.

    The last bin is closed on the right and is extended to reach ``T``.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if not T > 0:
        raise ValueError("T must be positive")
    n_bins = max(1, int(np.ceil(T / bin_width - 1e-12)))
    edges = np.arange(n_bins + 1) * float(bin_width)
    onsets = [report_onsets(r) for r in reports]
    onsets = np.concatenate(onsets) if onsets else np.empty(0)
    onsets = onsets[np.isfinite(onsets)]
    idx = np.clip(np.floor(onsets / bin_width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    mass = counts / counts.sum() if onsets.size else counts
    return OnsetHistogram(edges, mass, int(onsets.size), onsets)


def write_metric_table(rows, path):
    """Rows of ``(method, precision, recall, entropy, ari)``; NaN for missing values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "precision", "recall", "entropy", "ari"])
        for method, *vals in rows:
            w.writerow([method] + [repr(float(v)) for v in vals])
