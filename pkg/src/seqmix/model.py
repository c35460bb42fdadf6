"""Gaussian mixture with sequentially appearing clusters.

Each component ``k >= 1`` carries a logistic activation

    alpha_k(t) = beta_k / (1 + exp(-gamma_k * (t - tau_k)))

while component 0 is the reference cluster with ``alpha_0(t) = 1``. The
mixture weight of component ``k`` at time ``t`` is its activation divided by
the sum of all activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

__all__ = [
    "NotPositiveDefiniteError",
    "SigmoidParams",
    "GmmSeqModel",
    "ReparamVector",
    "activation",
    "log_activations",
    "proportions",
    "log_proportions",
    "gaussian_logpdf",
    "component_logpdf",
    "observed_loglik",
    "to_reparam",
    "from_reparam",
]

# |xi| cap used when tau sits exactly on a boundary of [0, T].
XI_CLAMP = 36.0


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a covariance matrix fails Cholesky factorization."""


@dataclass
class SigmoidParams:
    """Onsets, ceilings and kinetics of components ``1..K-1``.

    Component 0 has no stored parameters. All three arrays have length
    ``K - 1``.
    """

    tau: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    horizon: float

    def __post_init__(self):
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float)).copy()
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float)).copy()
        self.horizon = float(self.horizon)
        if not (self.tau.shape == self.beta.shape == self.gamma.shape):
            raise ValueError("tau, beta and gamma must have the same length")
        if self.tau.ndim != 1:
            raise ValueError("sigmoid parameters must be 1-D")
        if not (np.all(np.isfinite(self.tau)) and np.all(np.isfinite(self.beta))
                and np.all(np.isfinite(self.gamma)) and np.isfinite(self.horizon)):
            raise ValueError("sigmoid parameters must be finite")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if np.any(self.tau < 0) or np.any(self.tau > self.horizon):
            raise ValueError("onsets must lie in [0, horizon]")
        if np.any(self.beta < 0) or np.any(self.gamma < 0):
            raise ValueError("beta and gamma must be non-negative")

    @property
    def n_components(self) -> int:
        return self.tau.shape[0] + 1

    @classmethod
    def empty(cls, horizon: float) -> "SigmoidParams":
        return cls(np.empty(0), np.empty(0), np.empty(0), horizon)

    def copy(self) -> "SigmoidParams":
        return SigmoidParams(self.tau, self.beta, self.gamma, self.horizon)


@dataclass
class GmmSeqModel:
    """Gaussian components plus the sigmoid parameters driving their weights."""

    means: np.ndarray
    covariances: np.ndarray
    sigmoids: SigmoidParams

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float)).copy()
        self.covariances = np.asarray(self.covariances, dtype=float).copy()
        K, d = self.means.shape
        if self.covariances.shape != (K, d, d):
            raise ValueError(
                f"covariances must have shape {(K, d, d)}, got {self.covariances.shape}"
            )
        if self.sigmoids.n_components != K:
            raise ValueError(
                f"sigmoids describe {self.sigmoids.n_components} components, means {K}"
            )
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.covariances))):
            raise ValueError("model parameters must be finite")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def horizon(self) -> float:
        return self.sigmoids.horizon

    def copy(self) -> "GmmSeqModel":
        return GmmSeqModel(self.means, self.covariances, self.sigmoids.copy())

    def permuted(self, order) -> "GmmSeqModel":
        """Return the model with components reordered; ``order[0]`` must be 0."""
        order = np.asarray(order, dtype=int)
        if order[0] != 0 or sorted(order.tolist()) != list(range(self.n_components)):
            raise ValueError("order must be a permutation keeping component 0 first")
        idx = order[1:] - 1
        s = self.sigmoids
        return GmmSeqModel(
            self.means[order],
            self.covariances[order],
            SigmoidParams(s.tau[idx], s.beta[idx], s.gamma[idx], s.horizon),
        )

    def onset_order(self) -> np.ndarray:
        """Component order with the reference first, then ascending onset."""
        rest = np.argsort(self.sigmoids.tau, kind="stable") + 1
        return np.concatenate([[0], rest]).astype(int)

    def to_dict(self) -> dict:
        s = self.sigmoids
        return {
            "K": self.n_components,
            "d": self.n_features,
            "means": self.means.tolist(),
            "covariances": [c.reshape(-1).tolist() for c in self.covariances],
            "tau": s.tau.tolist(),
            "beta": s.beta.tolist(),
            "gamma": s.gamma.tolist(),
            "T": s.horizon,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GmmSeqModel":
        K, d = int(payload["K"]), int(payload["d"])
        means = np.asarray(payload["means"], dtype=float).reshape(K, d)
        covs = np.asarray(payload["covariances"], dtype=float).reshape(K, d, d)
        sig = SigmoidParams(payload["tau"], payload["beta"], payload["gamma"], payload["T"])
        return cls(means, covs, sig)


@dataclass
class ReparamVector:
    """Unconstrained coordinates of the sigmoid parameters.

    ``tau = T * expit(xi)``, ``beta = b**2`` and ``gamma = g**2``. With a
    shared kinetics constraint ``g`` has length one.
    """

    xi: np.ndarray
    b: np.ndarray
    g: np.ndarray
    shared_gamma: bool = field(default=False)

    def __post_init__(self):
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.shared_gamma and self.xi.size and self.g.size != 1:
            raise ValueError("shared gamma needs exactly one g coordinate")

    @property
    def n_sigmoids(self) -> int:
        return self.xi.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.xi, self.b, self.g])

    @classmethod
    def unflatten(cls, vec, n_sigmoids: int, shared_gamma: bool = False) -> "ReparamVector":
        vec = np.asarray(vec, dtype=float)
        m = n_sigmoids
        return cls(vec[:m], vec[m:2 * m], vec[2 * m:], shared_gamma=shared_gamma)

    def constrained(self, horizon: float):
        """Return ``(tau, beta, gamma)`` arrays."""
        tau = horizon * expit(self.xi)
        beta = self.b ** 2
        gamma = np.broadcast_to(self.g ** 2, self.xi.shape).copy()
        return tau, beta, gamma


def to_reparam(sigmoids: SigmoidParams, shared_gamma: bool = False) -> ReparamVector:
    """Map constrained sigmoid parameters to unconstrained coordinates.

    Onsets exactly on the boundary of ``[0, T]`` map to ``xi = -/+36``. With
    ``shared_gamma`` the single kinetics coordinate is taken from the mean
    of the current gammas.
    """
    T = sigmoids.horizon
    frac = sigmoids.tau / T
    with np.errstate(divide="ignore"):
        xi = np.log(frac) - np.log1p(-frac)
    xi = np.clip(xi, -XI_CLAMP, XI_CLAMP)
    b = np.sqrt(sigmoids.beta)
    if shared_gamma:
        g = np.sqrt(np.atleast_1d(sigmoids.gamma.mean())) if sigmoids.gamma.size else np.empty(0)
    else:
        g = np.sqrt(sigmoids.gamma)
    return ReparamVector(xi, b, g, shared_gamma=shared_gamma)


def from_reparam(params: ReparamVector, horizon: float) -> SigmoidParams:
    tau, beta, gamma = params.constrained(horizon)
    # expit can round to exactly T; clip keeps the invariant explicit.
    return SigmoidParams(np.clip(tau, 0.0, horizon), beta, gamma, horizon)


def _as_times(t) -> np.ndarray:
    return np.atleast_1d(np.asarray(t, dtype=float))


def activation(t, k: int, sigmoids: SigmoidParams):
    """Activation of component ``k`` (0-based) at time(s) ``t``.

    Returns a float for scalar ``t`` and an array otherwise.
    """
    K = sigmoids.n_components
    if not 0 <= k < K:
        raise IndexError(f"component index {k} out of range for K={K}")
    scalar = np.ndim(t) == 0
    times = _as_times(t)
    if k == 0:
        out = np.ones_like(times)
    else:
        j = k - 1
        z = sigmoids.gamma[j] * (times - sigmoids.tau[j])
        out = sigmoids.beta[j] * expit(z)
    return float(out[0]) if scalar else out


def log_activations(t, sigmoids: SigmoidParams) -> np.ndarray:
    """``(n_times, K)`` matrix of log activations; overflow free."""
    times = _as_times(t)
    s = sigmoids
    z = s.gamma[None, :] * (times[:, None] - s.tau[None, :])
    with np.errstate(divide="ignore"):
        log_beta = np.log(s.beta)
    out = np.zeros((times.size, s.n_components))
    # log(expit(z)) = -log(1 + exp(-z))
    out[:, 1:] = log_beta[None, :] - np.logaddexp(0.0, -z)
    return out


def row_logsumexp(a: np.ndarray) -> np.ndarray:
    """``log(sum(exp(a), axis=1))`` as an ``(n, 1)`` column; lighter than scipy's for 2-D input."""
    m = a.max(axis=1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))


def log_proportions(t, sigmoids: SigmoidParams) -> np.ndarray:
    la = log_activations(t, sigmoids)
    return la - row_logsumexp(la)


def proportions(t, sigmoids: SigmoidParams) -> np.ndarray:
    """Time-varying mixture weights.

    Parameters
    ----------
    t : float or array-like of shape (n_times,)
    sigmoids : SigmoidParams

    Returns
    -------
    ndarray of shape (K,) for scalar ``t``, else (n_times, K)
        Rows sum to one.
    """
    pi = np.exp(log_proportions(t, sigmoids))
    return pi[0] if np.ndim(t) == 0 else pi


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(sigma, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError("covariance is not positive definite") from exc


def gaussian_logpdf(x, mu, sigma) -> float:
    """Log density of a multivariate normal via a Cholesky factor."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return float(component_logpdf(x[None, :], mu[None, :], sigma[None, :, :])[0, 0])


def component_logpdf(X: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """``(N, K)`` matrix of ``log phi(x_i; mu_k, Sigma_k)``."""
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    K = means.shape[0]
    out = np.empty((N, K))
    const = d * np.log(2.0 * np.pi)
    for k in range(K):
        L = _cholesky(covariances[k])
        z = linalg.solve_triangular(L, (X - means[k]).T, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, k] = -0.5 * (const + logdet + np.sum(z * z, axis=0))
    return out


def joint_log_density(model: GmmSeqModel, X, t) -> np.ndarray:
    """``(N, K)`` matrix of ``log pi_ik + log phi(x_i; mu_k, Sigma_k)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"data has {X.shape[1]} features, model expects {model.n_features}"
        )
    t = _as_times(t)
    if t.shape[0] != X.shape[0]:
        raise ValueError("features and timestamps differ in length")
    return log_proportions(t, model.sigmoids) + component_logpdf(X, model.means, model.covariances)


def observed_loglik(model: GmmSeqModel, X, t) -> float:
    """Sum over observations of ``log sum_k pi_ik phi(x_i; mu_k, Sigma_k)``."""
    return float(np.sum(row_logsumexp(joint_log_density(model, X, t))))
