"""K-means and fixed-proportion Gaussian mixtures.

Both serve as comparison baselines and as initializers for the sequential
mixture. Labels are 0-based.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "StandardGmm",
    "kmeans_fit",
    "gmm_fit",
    "gmm_em",
    "floor_covariance",
    "variance_floor",
    "first_occurrence_onsets",
    "BaselineKMeans",
    "BaselineGMM",
]

logger = logging.getLogger(__name__)

LLOYD_MAX_ITER = 300
GMM_MAX_ITER = 500
GMM_TOL = 1e-6


@dataclass
class StandardGmm:
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


def _seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


def _kmeanspp(X, K, rng):
    N = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(N)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(N)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total)))
            idx = min(idx, N - 1)
        centers[k] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[k]) ** 2, axis=1))
    return centers


def _sq_dists(X, centers):
    return np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def _lloyd(X, centers, max_iter=LLOYD_MAX_ITER):
    K = centers.shape[0]
    prev = None
    trace = []
    for _ in range(max_iter):
        d2 = _sq_dists(X, centers)
        labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(X.shape[0]), labels].sum()))
        counts = np.bincount(labels, minlength=K)
        for k in np.nonzero(counts == 0)[0]:
            # reseed at the point farthest from its current centre
            far = int(np.argmax(d2[np.arange(X.shape[0]), labels]))
            centers[k] = X[far]
            labels[far] = k
            d2[far] = 0.0
            counts = np.bincount(labels, minlength=K)
        centers = np.stack([X[labels == k].mean(axis=0) for k in range(K)])
        if prev is not None and np.array_equal(labels, prev):
            break
        prev = labels
    d2 = _sq_dists(X, centers)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(X.shape[0]), labels].sum())
    trace.append(inertia)
    return labels, centers, inertia, trace


def kmeans_fit(X, K: int, restarts: int = 10, seed: int = 0):
    """K-means with k-means++ seeding; best of ``restarts`` by inertia.

    Returns
    -------
    labels : ndarray of shape (N,)
    centers : ndarray of shape (K, d)
    sum_sq : float
        Within-cluster sum of squared distances.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for ss in _seeds(seed, restarts):
        rng = np.random.default_rng(ss)
        res = _lloyd(X, _kmeanspp(X, K, rng))
        if best is None or res[2] < best[2]:
            best = res
    return best[:3]


def variance_floor(X, relative: float) -> float:
    """Absolute eigenvalue floor: ``relative`` times the mean per-feature variance of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    scale = float(np.mean(np.var(X, axis=0)))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    return relative * scale


def floor_covariance(cov, eps: float):
    """Symmetrize and raise any eigenvalue below ``eps`` to ``eps``.

    This is the exact maximizer of a weighted Gaussian likelihood over
    covariances with smallest eigenvalue at least ``eps``, so a floored
    M-step still never lowers the auxiliary function.
    """
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w[0] >= eps:
        return cov
    return (V * np.maximum(w, eps)) @ V.T


def _logpdfs(X, means, covs):
    return np.column_stack(
        [multivariate_normal(mean=m, cov=c).logpdf(X).reshape(-1) for m, c in zip(means, covs)]
    )


def gmm_em(X, means, covariances, weights, *, max_iter=GMM_MAX_ITER, tol=GMM_TOL,
           covariance_floor=1e-6, update_weights=True):
    """Plain EM for a full-covariance Gaussian mixture from a given start.

    Returns ``(StandardGmm, responsibilities, loglik_trace, converged)``. The
    trace starts with the log-likelihood of the initial parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means = np.array(means, dtype=float)
    covs = np.array(covariances, dtype=float)
    w = np.array(weights, dtype=float)
    N, d = X.shape
    K = means.shape[0]
    eps = variance_floor(X, covariance_floor)

    def joint():
        with np.errstate(divide="ignore"):
            return np.log(w)[None, :] + _logpdfs(X, means, covs)

    jl = joint()
    ll = float(logsumexp(jl, axis=1).sum())
    trace = [ll]
    converged = False
    for _ in range(max_iter):
        resp = np.exp(jl - logsumexp(jl, axis=1, keepdims=True))
        nk = resp.sum(axis=0)
        for k in range(K):
            if nk[k] < 1e-8:
                means[k] = X[np.argmin(resp.max(axis=1))]
                covs[k] = floor_covariance(np.cov(X.T, bias=True).reshape(d, d), eps)
                continue
            means[k] = resp[:, k] @ X / nk[k]
            diff = X - means[k]
            covs[k] = floor_covariance((resp[:, k, None] * diff).T @ diff / nk[k], eps)
        if update_weights:
            w = nk / N
        jl = joint()
        new = float(logsumexp(jl, axis=1).sum())
        trace.append(new)
        if abs(new - ll) / (abs(ll) + 1.0) < tol:
            converged = True
            ll = new
            break
        ll = new
    resp = np.exp(jl - logsumexp(jl, axis=1, keepdims=True))
    return StandardGmm(means, covs, w), resp, np.array(trace), converged


def _partition_stats(X, labels, K, floor):
    d = X.shape[1]
    means = np.empty((K, d))
    covs = np.empty((K, d, d))
    eps = variance_floor(X, floor)
    for k in range(K):
        pts = X[labels == k]
        if len(pts) == 0:
            # an empty cluster restarts from the global moments
            pts = X
        means[k] = pts.mean(axis=0)
        diff = pts - means[k]
        covs[k] = floor_covariance(diff.T @ diff / max(len(pts), 1), eps)
    return means, covs


def gmm_fit(X, K: int, restarts: int = 10, seed: int = 0, *, max_iter=GMM_MAX_ITER,
            tol=GMM_TOL, covariance_floor=1e-6):
    """Full-covariance GMM, each restart started from a K-means partition.

    Returns the restart with the highest log-likelihood as
    ``(StandardGmm, responsibilities, loglik)``. If that restart hit the
    iteration cap a :class:`ConvergenceWarning` is emitted.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    best = None
    for ss in _seeds(seed, restarts):
        km_seed = int(ss.generate_state(1)[0])
        labels, _, _ = kmeans_fit(X, K, restarts=1, seed=km_seed)
        means, covs = _partition_stats(X, labels, K, covariance_floor)
        weights = np.bincount(labels, minlength=K) / N
        model, resp, trace, conv = gmm_em(
            X, means, covs, weights, max_iter=max_iter, tol=tol, covariance_floor=covariance_floor
        )
        if best is None or trace[-1] > best[2]:
            best = (model, resp, float(trace[-1]), conv)
    if not best[3]:
        warnings.warn("best GMM restart did not converge", ConvergenceWarning, stacklevel=2)
    return best[0], best[1], best[2]


def first_occurrence_onsets(labels, timestamps, K: int | None = None) -> np.ndarray:
    """Earliest timestamp of each cluster; NaN marks a cluster never used."""
    labels = np.asarray(labels, dtype=int).reshape(-1)
    t = np.asarray(timestamps, dtype=float).reshape(-1)
    if labels.shape != t.shape:
        raise ValueError("labels and timestamps differ in length")
    K = int(labels.max()) + 1 if K is None else K
    out = np.full(K, np.nan)
    for k in range(K):
        hit = labels == k
        if hit.any():
            out[k] = t[hit].min()
    return out


class BaselineKMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans_fit`."""

    def __init__(self, n_clusters=2, n_init=10, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.labels_, self.cluster_centers_, self.inertia_ = kmeans_fit(
            X, self.n_clusters, self.n_init, self.random_state or 0
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)


class BaselineGMM(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`gmm_fit`."""

    def __init__(self, n_components=2, n_init=10, max_iter=GMM_MAX_ITER, tol=GMM_TOL,
                 covariance_floor=1e-6, random_state=0):
        self.n_components = n_components
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.covariance_floor = covariance_floor
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        model, resp, ll = gmm_fit(
            X, self.n_components, self.n_init, self.random_state or 0,
            max_iter=self.max_iter, tol=self.tol, covariance_floor=self.covariance_floor,
        )
        self.means_, self.covariances_, self.weights_ = model.means, model.covariances, model.weights
        self.loglik_ = ll
        self.labels_ = np.argmax(resp, axis=1)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=float)
        with np.errstate(divide="ignore"):
            jl = np.log(self.weights_)[None, :] + _logpdfs(X, self.means_, self.covariances_)
        return np.exp(jl - logsumexp(jl, axis=1, keepdims=True))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)
