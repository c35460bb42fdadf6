"""Scikit-learn style front end for the sequential mixture."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .em import FitConfig, OnsetPrior, fit
from .model import joint_log_density, proportions
from .selection import information_criteria

__all__ = ["GMMSeq"]


def _times(t, n):
    if t is None:
        raise TypeError("timestamps are required")
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.shape[0] != n:
        raise ValueError(f"got {t.shape[0]} timestamps for {n} observations")
    if not np.all(np.isfinite(t)):
        raise ValueError("timestamps must be finite")
    return t


class GMMSeq(ClusterMixin, BaseEstimator):
    """Gaussian mixture whose clusters switch on one after another.

    Every method that needs proportions takes the observation timestamps as
    its second argument. Component 0 is always present; component ``k > 0``
    ramps up around ``onsets_[k - 1]`` with ceiling ``ceilings_[k - 1]`` and
    rate ``kinetics_[k - 1]``. Components are numbered by onset.

    Parameters mirror :class:`~seqmix.em.FitConfig`. ``prior_onsets`` maps a
    component index (1..K-1) to a prior onset time, weighted by
    ``prior_strength``.
    """

    def __init__(self, n_components=4, *, shared_gamma=False, prior_onsets=None, prior_strength=0.0,
                 n_init=10, init_scheme="all", max_iter=500, tol=1e-6, inner_max_iter=100,
                 inner_tol=1e-6, covariance_floor=1e-6, random_state=0, n_jobs=1):
        self.n_components = n_components
        self.shared_gamma = shared_gamma
        self.prior_onsets = prior_onsets
        self.prior_strength = prior_strength
        self.n_init = n_init
        self.init_scheme = init_scheme
        self.max_iter = max_iter
        self.tol = tol
        self.inner_max_iter = inner_max_iter
        self.inner_tol = inner_tol
        self.covariance_floor = covariance_floor
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> FitConfig:
        prior = None
        if self.prior_onsets:
            comps = sorted(int(c) for c in self.prior_onsets)
            prior = OnsetPrior(tuple(comps), tuple(self.prior_onsets[c] for c in comps),
                               float(self.prior_strength))
        return FitConfig(
            max_em_iters=self.max_iter, loglik_rel_tol=self.tol, restarts=self.n_init,
            init_scheme=self.init_scheme, shared_gamma=self.shared_gamma, onset_prior=prior,
            inner_max_iters=self.inner_max_iter, inner_grad_tol=self.inner_tol,
            covariance_floor=self.covariance_floor, seed=int(self.random_state or 0),
            n_jobs=self.n_jobs,
        )

    def fit(self, X, timestamps=None):
        X = check_array(X, dtype=float)
        t = _times(timestamps, X.shape[0])
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        report = fit(X, t, int(self.n_components), self._config())
        self.report_ = report
        self.model_ = report.model
        sig = report.model.sigmoids
        self.means_ = report.model.means
        self.covariances_ = report.model.covariances
        self.onsets_ = sig.tau
        self.ceilings_ = sig.beta
        self.kinetics_ = sig.gamma
        self.horizon_ = sig.horizon
        self.labels_ = report.labels
        self.n_iter_ = report.n_iter
        self.converged_ = report.converged
        self.loglik_ = report.loglik
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, timestamps=None):
        return self.fit(X, timestamps).labels_

    def _joint(self, X, timestamps):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return joint_log_density(self.model_, X, _times(timestamps, X.shape[0]))

    def score_samples(self, X, timestamps=None):
        """Per-observation log density."""
        return logsumexp(self._joint(X, timestamps), axis=1)

    def score(self, X, timestamps=None):
        """Mean log density per observation."""
        return float(np.mean(self.score_samples(X, timestamps)))

    def predict_proba(self, X, timestamps=None):
        jl = self._joint(X, timestamps)
        return np.exp(jl - logsumexp(jl, axis=1, keepdims=True))

    def predict(self, X, timestamps=None):
        return np.argmax(self.predict_proba(X, timestamps), axis=1)

    def proportions(self, timestamps):
        check_is_fitted(self, "model_")
        return proportions(np.asarray(timestamps, dtype=float), self.model_.sigmoids)

    def _criteria(self):
        check_is_fitted(self, "report_")
        return information_criteria(self.report_, self.report_.responsibilities.shape[0])

    def aic(self):
        return self._criteria()[0]

    def bic(self):
        return self._criteria()[1]

    def icl(self):
        return self._criteria()[2]
