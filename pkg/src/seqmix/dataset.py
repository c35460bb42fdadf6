"""Timestamped feature matrices: loading, validation and preprocessing."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "DatasetError",
    "TimestampedDataset",
    "PreprocessConfig",
    "load_dataset",
    "save_dataset",
    "moving_median",
    "pca_reduce",
    "standardize",
    "StreamPreprocessor",
    "preprocess",
]

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed or invalid input data."""


def _break_ties(t: np.ndarray) -> np.ndarray:
    out = t.copy()
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], np.inf)
    return out


@dataclass
class TimestampedDataset:
    """``N`` feature vectors with strictly increasing timestamps (seconds).

    The stream start ``t = 0`` is implicit and indexes no observation.
    """

    features: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DatasetError("features must be a non-empty N x d matrix")
        if t.shape[0] != X.shape[0]:
            raise DatasetError(
                f"{X.shape[0]} feature rows but {t.shape[0]} timestamps"
            )
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            i, j = bad[0]
            raise DatasetError(f"non-finite feature at row {i}, column {j}")
        if not np.all(np.isfinite(t)):
            raise DatasetError(f"non-finite timestamp at row {int(np.argmax(~np.isfinite(t)))}")
        if np.any(t < 0):
            raise DatasetError("timestamps must be non-negative")
        steps = np.diff(t)
        if np.any(steps <= 0):
            i = int(np.argmax(steps <= 0))
            raise DatasetError(
                f"timestamps not strictly increasing at rows {i} and {i + 1}"
            )
        self.features = X
        self.timestamps = t

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1])

    @classmethod
    def from_unsorted(cls, features, timestamps, *, allow_ties: bool = False):
        """Build a dataset, sorting by time and optionally breaking ties.

        Sorting emits a warning. Duplicate timestamps raise unless
        ``allow_ties``; ties are then separated by the smallest representable
        increments, keeping the original row order among equal times.
        """
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.asarray(timestamps, dtype=float).reshape(-1)
        if t.shape[0] != X.shape[0]:
            raise DatasetError(f"{X.shape[0]} feature rows but {t.shape[0]} timestamps")
        if not np.all(np.isfinite(t)):
            raise DatasetError(f"non-finite timestamp at row {int(np.argmax(~np.isfinite(t)))}")
        if np.any(np.diff(t) < 0):
            warnings.warn("rows were not in time order; sorting by timestamp", stacklevel=2)
            order = np.argsort(t, kind="stable")
            X, t = X[order], t[order]
        dup = np.diff(t) == 0
        if np.any(dup):
            if not allow_ties:
                i = int(np.argmax(dup))
                raise DatasetError(f"duplicate timestamp {t[i]!r} at rows {i} and {i + 1}")
            t = _break_ties(t)
        return cls(X, t)


@dataclass(frozen=True)
class PreprocessConfig:
    median_window: int = 31
    pca_variance_target: float = 0.99
    standardize: bool = True

    def __post_init__(self):
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError(f"median_window must be a positive odd integer, got {self.median_window}")
        if not 0 < self.pca_variance_target <= 1:
            raise ValueError("pca_variance_target must lie in (0, 1]")


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _load_csv(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    start = 0
    if not all(_is_number(c) for c in rows[0]):
        start = 1
    rows = rows[start:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise DatasetError(f"{path}: need a timestamp column and at least one feature")
    values = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        line = r + start + 1
        if len(row) != width:
            raise DatasetError(f"{path}: row {line} has {len(row)} columns, expected {width}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{path}: row {line}, column {c}: not a number: {cell!r}") from None
            if not np.isfinite(v):
                raise DatasetError(f"{path}: row {line}, column {c}: non-finite value {cell!r}")
            values[r, c] = v
    return values[:, 1:], values[:, 0]


def _load_json(path: Path):
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(payload, dict) or "timestamps" not in payload or "features" not in payload:
        raise DatasetError(f"{path}: expected an object with 'timestamps' and 'features'")
    t = np.asarray(payload["timestamps"], dtype=float)
    try:
        X = np.asarray(payload["features"], dtype=float)
    except ValueError:
        raise DatasetError(f"{path}: ragged feature rows") from None
    if t.size == 0:
        raise DatasetError(f"{path}: empty dataset")
    if X.ndim == 1:
        X = X[:, None]
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise DatasetError(f"{path}: row {i}, column {j}: non-finite value")
    return X, t


def load_dataset(path, format: str | None = None, *, allow_ties: bool = False) -> TimestampedDataset:
    """Read a dataset from CSV (timestamp first column) or JSON.

    The format is inferred from the suffix when not given. A non-numeric
    first CSV row is treated as a header.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        X, t = _load_csv(path)
    elif fmt == "json":
        X, t = _load_json(path)
    else:
        raise DatasetError(f"unsupported format {fmt!r}; use csv or json")
    return TimestampedDataset.from_unsorted(X, t, allow_ties=allow_ties)


def save_dataset(dataset: TimestampedDataset, path, *, header: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["t"] + [f"x{j}" for j in range(dataset.n_features)])
        for ti, row in zip(dataset.timestamps, dataset.features):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])


def moving_median(features, window: int) -> np.ndarray:
    """Column-wise centred running median with shrinking edge windows."""
    X = np.asarray(features, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    if window == 1:
        out = X.copy()
    else:
        h = window // 2
        padded = np.pad(X, ((h, h), (0, 0)), constant_values=np.nan)
        view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
        out = np.nanmedian(view, axis=-1)
    return out[:, 0] if squeeze else out


def standardize(features):
    """Zero-mean, unit-variance columns. Constant columns get scale 1."""
    X = np.asarray(features, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - mean) / scale, mean, scale


def _n_for_target(ratios: np.ndarray, target: float) -> int:
    cum = np.cumsum(ratios)
    # tolerate round-off so a target of 1.0 keeps every non-null component
    hits = np.nonzero(cum >= target - 1e-12)[0]
    return int(hits[0]) + 1 if hits.size else ratios.size


def pca_reduce(features, variance_target: float):
    """Project centred data on the leading principal directions.

    Returns
    -------
    scores : ndarray of shape (N, n)
    projection : ndarray of shape (d, n)
        Orthonormal columns ordered by decreasing variance.
    explained : ndarray of shape (n,)
        Explained-variance ratio per retained component.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_reduce needs at least two observations")
    if not 0 < variance_target <= 1:
        raise ValueError("variance_target must lie in (0, 1]")
    Xc = X - X.mean(axis=0)
    _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
    var = sv ** 2
    total = var.sum()
    if total == 0:
        # all rows identical: keep one direction carrying no variance
        proj = np.eye(X.shape[1])[:, :1]
        return Xc @ proj, proj, np.ones(1)
    keep = var > var[0] * X.shape[1] * np.finfo(float).eps
    var, vt = var[keep], vt[keep]
    ratios = var / total
    n = _n_for_target(ratios, variance_target)
    proj = vt[:n].T
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(proj[np.argmax(np.abs(proj), axis=0), np.arange(n)])
    signs[signs == 0] = 1.0
    proj = proj * signs
    return Xc @ proj, proj, ratios[:n]


class StreamPreprocessor(TransformerMixin, BaseEstimator):
    """Running median, standardization and PCA as one transformer.

    The median filter is stateless; standardization statistics and the
    projection are learned in :meth:`fit` so they can be reused on another
    campaign.
    """

    def __init__(self, median_window=31, variance_target=0.99, standardize=True):
        self.median_window = median_window
        self.variance_target = variance_target
        self.standardize = standardize

    def fit(self, X, y=None):
        PreprocessConfig(self.median_window, self.variance_target, self.standardize)
        Xm = moving_median(np.asarray(X, dtype=float), self.median_window)
        if self.standardize:
            Xs, self.mean_, self.scale_ = standardize(Xm)
        else:
            Xs = Xm
            self.mean_ = np.zeros(Xm.shape[1])
            self.scale_ = np.ones(Xm.shape[1])
        _, self.components_, self.explained_variance_ratio_ = pca_reduce(Xs, self.variance_target)
        self.center_ = Xs.mean(axis=0)
        self.n_features_in_ = Xm.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Xm = moving_median(X, self.median_window)
        Xs = (Xm - self.mean_) / self.scale_
        return (Xs - self.center_) @ self.components_

    def save_projection(self, path) -> None:
        """Write the learned statistics as CSV, one column per input feature.

        Rows are ``mean``, ``scale``, ``center`` and then one ``component<j>``
        row per retained direction.
        """
        check_is_fitted(self, "components_")
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row"] + [f"feature{j}" for j in range(self.n_features_in_)])
            for name, vec in (("mean", self.mean_), ("scale", self.scale_), ("center", self.center_)):
                w.writerow([name] + [repr(float(v)) for v in vec])
            for j in range(self.components_.shape[1]):
                w.writerow([f"component{j}"] + [repr(float(v)) for v in self.components_[:, j]])

    @classmethod
    def load_projection(cls, path, median_window=31) -> "StreamPreprocessor":
        """Rebuild a fitted transformer from :meth:`save_projection` output."""
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        table = {r[0]: np.array([float(v) for v in r[1:]]) for r in rows}
        comps = [table[k] for k in sorted((k for k in table if k.startswith("component")),
                                          key=lambda k: int(k[len("component"):]))]
        pre = cls(median_window=median_window)
        pre.mean_, pre.scale_, pre.center_ = table["mean"], table["scale"], table["center"]
        pre.components_ = np.column_stack(comps)
        pre.n_features_in_ = pre.mean_.size
        pre.explained_variance_ratio_ = np.full(pre.components_.shape[1], np.nan)
        return pre


def preprocess(dataset: TimestampedDataset, config: PreprocessConfig | None = None):
    """Apply the preprocessing chain; timestamps pass through untouched."""
    config = config or PreprocessConfig()
    pre = StreamPreprocessor(config.median_window, config.pca_variance_target, config.standardize)
    Z = pre.fit_transform(dataset.features)
    logger.info("PCA kept %d of %d components", Z.shape[1], dataset.n_features)
    return TimestampedDataset(Z, dataset.timestamps.copy()), pre
