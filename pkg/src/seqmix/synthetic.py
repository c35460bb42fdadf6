"""Simulated streams with known onsets and labels."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import TimestampedDataset, save_dataset
from .model import GmmSeqModel, SigmoidParams, proportions

__all__ = [
    "MixtureSpec",
    "GroundTruth",
    "default_spec",
    "generate_timestamps",
    "generate_dataset",
    "write_dataset_with_truth",
]


@dataclass
class MixtureSpec:
    """Generating model description.

    Onsets are given either as times (``tau``) or as 0-based indices into the
    generated timestamp vector (``tau_indices``), resolved after the
    timestamps are drawn.
    """

    means: np.ndarray
    covariances: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    tau: np.ndarray | None = None
    tau_indices: np.ndarray | None = None

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        K, d = self.means.shape
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(K, d, d)
        self.beta = np.asarray(self.beta, dtype=float).reshape(K - 1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(K - 1)
        self.counts = np.asarray(self.counts, dtype=int).reshape(K)
        if np.any(self.counts <= 0):
            raise ValueError("cluster counts must be positive")
        if (self.tau is None) == (self.tau_indices is None):
            if K > 1:
                raise ValueError("give exactly one of tau or tau_indices")
            self.tau = np.empty(0)
        if self.tau is not None:
            self.tau = np.asarray(self.tau, dtype=float).reshape(K - 1)
        if self.tau_indices is not None:
            self.tau_indices = np.asarray(self.tau_indices, dtype=int).reshape(K - 1)
            if np.any(self.tau_indices < 0) or np.any(self.tau_indices >= self.counts.sum()):
                raise ValueError("tau_indices out of range")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def to_dict(self) -> dict:
        out = {
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "counts": self.counts.tolist(),
        }
        if self.tau_indices is not None:
            out["tau_indices"] = self.tau_indices.tolist()
        else:
            out["tau"] = self.tau.tolist()
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "MixtureSpec":
        return cls(**{k: payload[k] for k in payload if k in
                      ("means", "covariances", "beta", "gamma", "counts", "tau", "tau_indices")})


def default_spec() -> MixtureSpec:
    """Four clusters in 2-D appearing one after another, 6000 observations."""
    return MixtureSpec(
        means=[[1, 1], [2, 3], [3, 5], [5, 6]],
        covariances=[
            [[0.3, 0.2], [0.2, 0.2]],
            [[0.3, 0.2], [0.2, 0.2]],
            [[0.2, 0.1], [0.1, 0.3]],
            [[0.2, 0.1], [0.1, 0.2]],
        ],
        beta=[2.72, 10.1, 30.2],
        gamma=[0.009, 0.015, 0.012],
        counts=[1000, 1000, 3000, 1000],
        tau_indices=[487, 1989, 2471],
    )


@dataclass
class GroundTruth:
    labels: np.ndarray
    model: GmmSeqModel
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "counts": self.counts.tolist(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GroundTruth":
        return cls(
            np.asarray(payload["labels"], dtype=int),
            GmmSeqModel.from_dict(payload["model"]),
            np.asarray(payload["counts"], dtype=int),
        )


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_timestamps(N: int, seed=None) -> np.ndarray:
    """``t_0 = 0`` and unit-uniform increments; exact zero draws are redrawn."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = _rng(seed)
    steps = rng.uniform(0.0, 1.0, N - 1)
    while np.any(steps == 0.0):
        zero = steps == 0.0
        steps[zero] = rng.uniform(0.0, 1.0, int(zero.sum()))
    return np.concatenate([[0.0], np.cumsum(steps)])


def _draw_labels(pi, counts, rng, sampling):
    N, K = pi.shape
    u = rng.uniform(size=N)
    if sampling == "categorical":
        cdf = np.cumsum(pi, axis=1)
        cdf[:, -1] = 1.0
        return (u[:, None] > cdf).sum(axis=1)
    remaining = counts.copy()
    labels = np.empty(N, dtype=int)
    relaxed = False
    for i in range(N):
        w = pi[i] * (remaining > 0)
        total = w.sum()
        if total <= 0:
            # proportions vanish on every cluster with budget left
            w = (remaining > 0).astype(float)
            total = w.sum()
            relaxed = True
        live = np.flatnonzero(w > 0)
        cdf = np.cumsum(w[live]) / total
        k = live[min(int(np.searchsorted(cdf, u[i], side="right")), live.size - 1)]
        labels[i] = k
        remaining[k] -= 1
    if relaxed:
        warnings.warn("count budget forced draws where proportions vanish", stacklevel=3)
    return labels


def generate_dataset(spec: MixtureSpec | None = None, seed=None, *, sampling: str = "categorical"):
    """Draw a stream from ``spec``.

    With ``sampling="categorical"`` each label comes from the time-varying
    proportions, so per-cluster counts only match ``spec.counts`` on
    average (the total is exact). ``sampling="budget"`` renormalizes the
    proportions over clusters with remaining budget so the counts are exact.

    Returns
    -------
    dataset : TimestampedDataset
    truth : GroundTruth
    """
    spec = spec or default_spec()
    if sampling not in ("categorical", "budget"):
        raise ValueError(f"unknown sampling {sampling!r}")
    rng = _rng(seed)
    N = int(spec.counts.sum())
    t = generate_timestamps(N, rng)
    T = float(t[-1]) if N > 1 else 1.0
    tau = t[spec.tau_indices] if spec.tau_indices is not None else spec.tau
    sig = SigmoidParams(tau, spec.beta, spec.gamma, T)
    model = GmmSeqModel(spec.means, spec.covariances, sig)
    pi = proportions(t, sig)
    labels = _draw_labels(pi, spec.counts, rng, sampling)
    K, d = spec.means.shape
    chol = np.linalg.cholesky(spec.covariances)
    z = rng.standard_normal((N, d))
    X = spec.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)
    counts = np.bincount(labels, minlength=K)
    return TimestampedDataset(X, t), GroundTruth(labels, model, counts)


def write_dataset_with_truth(dataset: TimestampedDataset, truth: GroundTruth, out_dir, stem="data"):
    """Write ``<stem>.csv`` and the ``<stem>_truth.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}_truth.json"
    save_dataset(dataset, csv_path)
    json_path.write_text(json.dumps(truth.to_dict(), indent=1) + "\n", encoding="utf-8")
    return csv_path, json_path
