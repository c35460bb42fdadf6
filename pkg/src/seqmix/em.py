"""EM estimation of the sequential Gaussian mixture.

The E-step and the Gaussian M-step are the usual closed forms. The sigmoid
parameters have no closed-form update; they are improved by a quasi-Newton
ascent on the proportion part of the auxiliary function in unconstrained
coordinates, which makes every iteration a generalized EM step.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .baselines import floor_covariance, gmm_fit, kmeans_fit, variance_floor
from .model import (
    GmmSeqModel,
    ReparamVector,
    SigmoidParams,
    from_reparam,
    joint_log_density,
    row_logsumexp,
    to_reparam,
)

__all__ = [
    "FitError",
    "OnsetPrior",
    "FitConfig",
    "FitReport",
    "e_step",
    "m_step_gaussian",
    "q1_value",
    "q1_gradient",
    "m_step_sigmoid",
    "init_time_blocks",
    "init_from_partition",
    "fit",
    "n_free_parameters",
]

logger = logging.getLogger(__name__)

INIT_SCHEMES = ("gmm", "kmeans", "time_blocks")
MIN_CLUSTER_WEIGHT = 1e-8
ONSET_QUANTILE = 0.05


class FitError(RuntimeError):
    """Every restart produced a non-finite likelihood."""


@dataclass(frozen=True)
class OnsetPrior:
    """Quadratic pull of some onsets towards prior values.

    ``components`` are 1-based positions among the sigmoid components, i.e.
    model component indices ``1..K-1``.
    """

    components: tuple
    tau: tuple
    strength: float

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(int(c) for c in self.components))
        object.__setattr__(self, "tau", tuple(float(v) for v in self.tau))
        if len(self.components) != len(self.tau):
            raise ValueError("one prior onset per listed component")
        if self.strength < 0:
            raise ValueError("prior strength must be non-negative")
        if any(c < 1 for c in self.components):
            raise ValueError("prior components are 1..K-1; component 0 has no onset")

    def penalty(self, tau: np.ndarray) -> float:
        idx = np.asarray(self.components, dtype=int) - 1
        diff = tau[idx] - np.asarray(self.tau)
        return float(self.strength * np.sum(diff * diff))


@dataclass(frozen=True)
class FitConfig:
    """EM settings. ``covariance_floor`` is relative to the mean per-feature variance of the data."""

    max_em_iters: int = 500
    loglik_rel_tol: float = 1e-6
    restarts: int = 10
    init_scheme: str = "all"
    shared_gamma: bool = False
    onset_prior: OnsetPrior | None = None
    inner_max_iters: int = 100
    inner_grad_tol: float = 1e-6
    covariance_floor: float = 1e-6
    seed: int = 0
    freeze_sigmoids: bool = False
    sort_components: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.loglik_rel_tol <= 0 or self.inner_grad_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1 or self.max_em_iters < 1:
            raise ValueError("restarts and max_em_iters must be >= 1")
        if self.init_scheme not in INIT_SCHEMES + ("all",):
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")

    def schemes(self):
        return INIT_SCHEMES if self.init_scheme == "all" else (self.init_scheme,)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.onset_prior is not None:
            out["onset_prior"] = {
                "components": list(self.onset_prior.components),
                "tau": list(self.onset_prior.tau),
                "strength": self.onset_prior.strength,
            }
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "FitConfig":
        payload = dict(payload)
        prior = payload.get("onset_prior")
        if prior is not None and not isinstance(prior, OnsetPrior):
            payload["onset_prior"] = OnsetPrior(**prior)
        return cls(**payload)


@dataclass
class FitReport:
    model: GmmSeqModel
    responsibilities: np.ndarray
    loglik_trace: np.ndarray
    converged: bool
    restart_index: int
    init_scheme_used: str
    objective_trace: np.ndarray
    reference_onset: float = float("nan")
    shared_gamma: bool = False
    component_order: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    runs: list = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def n_iter(self) -> int:
        return len(self.loglik_trace) - 1

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.responsibilities, axis=1)

    def onsets(self) -> np.ndarray:
        """All K onsets: the reference component's first hard assignment, then tau."""
        return np.concatenate([[self.reference_onset], self.model.sigmoids.tau])

    def to_dict(self, include_responsibilities: bool = True) -> dict:
        out = {
            "model": self.model.to_dict(),
            "loglik": self.loglik,
            "loglik_trace": self.loglik_trace.tolist(),
            "objective_trace": self.objective_trace.tolist(),
            "converged": bool(self.converged),
            "restart_index": int(self.restart_index),
            "init_scheme_used": self.init_scheme_used,
            "reference_onset": None if np.isnan(self.reference_onset) else self.reference_onset,
            "shared_gamma": bool(self.shared_gamma),
            "component_order": [int(v) for v in self.component_order],
            "runs": self.runs,
        }
        if include_responsibilities:
            out["responsibilities"] = self.responsibilities.tolist()
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "FitReport":
        model = GmmSeqModel.from_dict(payload["model"])
        resp = payload.get("responsibilities")
        resp = np.asarray(resp, dtype=float) if resp is not None else np.empty((0, model.n_components))
        ref = payload.get("reference_onset")
        return cls(
            model=model,
            responsibilities=resp,
            loglik_trace=np.asarray(payload["loglik_trace"], dtype=float),
            converged=bool(payload["converged"]),
            restart_index=int(payload["restart_index"]),
            init_scheme_used=payload["init_scheme_used"],
            objective_trace=np.asarray(payload.get("objective_trace", payload["loglik_trace"]), dtype=float),
            reference_onset=float("nan") if ref is None else float(ref),
            shared_gamma=bool(payload.get("shared_gamma", False)),
            component_order=np.asarray(payload.get("component_order", []), dtype=int),
            runs=list(payload.get("runs", [])),
        )


def n_free_parameters(K: int, d: int, shared_gamma: bool = False) -> int:
    """Means, full covariances and three sigmoid parameters per component past the first."""
    p = K * d + K * d * (d + 1) // 2 + 3 * (K - 1)
    if shared_gamma and K > 2:
        p -= K - 2
    return p


# --- E-step and Gaussian M-step ------------------------------------------------


def _posterior(model, X, t):
    jl = joint_log_density(model, X, t)
    lse = row_logsumexp(jl)
    return np.exp(jl - lse), float(lse.sum())


def e_step(model: GmmSeqModel, X, t) -> np.ndarray:
    """Posterior membership probabilities, ``(N, K)`` with unit row sums."""
    if not (np.all(np.isfinite(model.means)) and np.all(np.isfinite(model.covariances))):
        raise ValueError("model parameters must be finite")
    return _posterior(model, X, t)[0]


def m_step_gaussian(X, resp, covariance_floor: float = 1e-6):
    """Weighted means and covariances; near-empty components are reseeded.

    A component whose total responsibility falls below ``1e-8`` is moved onto
    the observation that is worst explained by the current responsibilities
    and given the (floored) global covariance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    resp = np.asarray(resp, dtype=float)
    N, d = X.shape
    K = resp.shape[1]
    nk = resp.sum(axis=0)
    eps = variance_floor(X, covariance_floor)
    means = np.empty((K, d))
    covs = np.empty((K, d, d))
    for k in range(K):
        if nk[k] < MIN_CLUSTER_WEIGHT:
            i = int(np.argmin(resp.max(axis=1)))
            logger.info("component %d is empty; reseeding at observation %d", k, i)
            means[k] = X[i]
            covs[k] = floor_covariance(np.cov(X.T, bias=True).reshape(d, d), eps)
            continue
        means[k] = resp[:, k] @ X / nk[k]
        diff = X - means[k]
        covs[k] = floor_covariance((resp[:, k, None] * diff).T @ diff / nk[k], eps)
    return means, covs


# --- proportion part of the auxiliary function ----------------------------------


def _log_props(params: ReparamVector, t, T):
    tau, _, gamma = params.constrained(T)
    z = gamma[None, :] * (t[:, None] - tau[None, :])
    la = np.zeros((t.size, params.n_sigmoids + 1))
    with np.errstate(divide="ignore"):
        la[:, 1:] = 2.0 * np.log(np.abs(params.b))[None, :] - np.logaddexp(0.0, -z)
    return la - row_logsumexp(la), z, tau, gamma


def q1_value(params: ReparamVector, resp, t, T: float, prior: OnsetPrior | None = None) -> float:
    """``sum_ik y_ik log pi_ik``, minus the onset penalty when a prior is given."""
    resp = np.asarray(resp, dtype=float)
    t = np.asarray(t, dtype=float)
    logpi, _, tau, _ = _log_props(params, t, T)
    with np.errstate(invalid="ignore"):
        terms = np.where(resp > 0, resp * logpi, 0.0)
    q = float(terms.sum())
    if prior is not None and prior.strength > 0:
        q -= prior.penalty(tau)
    return q


def _q1_and_gradient(params: ReparamVector, resp, t, T, prior):
    logpi, z, tau, gamma = _log_props(params, t, T)
    with np.errstate(invalid="ignore"):
        q = float(np.where(resp > 0, resp * logpi, 0.0).sum())
    pi = np.exp(logpi)
    # sum_l (y_il / pi_il) dpi_il/dalpha_ik, multiplied by alpha_ik
    r = (resp - pi * resp.sum(axis=1, keepdims=True))[:, 1:]
    off = expit(-z)  # 1 - Lambda(gamma (t - tau))
    dgamma = np.sum(r * (t[:, None] - tau[None, :]) * off, axis=0)
    dtau = -gamma * np.sum(r * off, axis=0)
    if prior is not None and prior.strength > 0:
        idx = np.asarray(prior.components, dtype=int) - 1
        diff = tau[idx] - np.asarray(prior.tau)
        dtau[idx] -= 2.0 * prior.strength * diff
        q -= float(prior.strength * np.sum(diff * diff))
    b = params.b
    with np.errstate(divide="ignore", invalid="ignore"):
        db = np.where(b != 0, 2.0 * r.sum(axis=0) / b, 0.0)
    dxi = dtau * tau * (1.0 - tau / T)
    if params.shared_gamma:
        dg = 2.0 * params.g * dgamma.sum(keepdims=True)
    else:
        dg = 2.0 * params.g * dgamma
    grad = ReparamVector(dxi, db, dg, shared_gamma=params.shared_gamma)
    return q, grad


def q1_gradient(params: ReparamVector, resp, t, T: float, prior: OnsetPrior | None = None) -> ReparamVector:
    """Analytic gradient of :func:`q1_value` in ``(xi, b, g)`` coordinates."""
    return _q1_and_gradient(params, np.asarray(resp, dtype=float), np.asarray(t, dtype=float), T, prior)[1]


# --- sigmoid M-step --------------------------------------------------------------


@dataclass
class InnerResult:
    x: np.ndarray
    f_start: float
    f_end: float
    n_iter: int
    stagnated: bool
    inv_hessian: np.ndarray | None


def _bfgs_ascent(fg, x0, max_iter, gtol, H0=None, ftol=1e-12):
    """Maximize with BFGS directions and Armijo backtracking.

    Only steps that increase the objective are accepted, so the returned
    value is never below the starting one.
    """
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    f0 = f
    n = x.size
    if not np.isfinite(f) or n == 0:
        return InnerResult(x, f0, f, 0, not np.isfinite(f), H0)
    H = None if H0 is None or H0.shape != (n, n) else H0.copy()
    it = 0
    stalled = False
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            it -= 1
            break
        p = H @ g if H is not None else g / np.linalg.norm(g)
        slope = p @ g
        if not slope > 0:
            H = None
            p = g / np.linalg.norm(g)
            slope = p @ g
        step = 1.0
        while True:
            xn = x + step * p
            fn, gn = fg(xn)
            if np.isfinite(fn) and fn >= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-14:
                fn = None
                break
        if fn is None:
            if H is not None:
                H = None
                continue
            stalled = True
            break
        s = xn - x
        y = g - gn
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if H is None:
                H = np.eye(n) * (sy / (y @ y))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        gain = fn - f
        x, f, g = xn, fn, gn
        if gain <= ftol * (abs(f) + 1.0):
            break
    return InnerResult(x, f0, f, it, stalled and f <= f0, H)


def m_step_sigmoid(current: SigmoidParams, resp, t, T: float | None = None, config: FitConfig | None = None,
                   *, return_info: bool = False, inv_hessian=None):
    """Improve the sigmoid parameters for fixed responsibilities.

    The starting point is the unconstrained image of ``current``; the result
    never has a lower ``q1_value``. When the optimizer makes no progress the
    starting parameters come back unchanged and ``info.stagnated`` is set.
    """
    config = config or FitConfig()
    T = current.horizon if T is None else float(T)
    resp = np.asarray(resp, dtype=float)
    t = np.asarray(t, dtype=float)
    m = current.tau.size
    if m == 0:
        info = InnerResult(np.empty(0), 0.0, 0.0, 0, False, None)
        return (current.copy(), info) if return_info else current.copy()
    shared = config.shared_gamma
    prior = config.onset_prior
    # with shared kinetics, untied gammas are first replaced by their mean
    x0 = to_reparam(current, shared_gamma=shared)

    def fg(vec):
        params = ReparamVector.unflatten(vec, m, shared)
        q, grad = _q1_and_gradient(params, resp, t, T, prior)
        return q, grad.flatten()

    res = _bfgs_ascent(fg, x0.flatten(), config.inner_max_iters, config.inner_grad_tol, inv_hessian)
    if res.f_end > res.f_start:
        new = from_reparam(ReparamVector.unflatten(res.x, m, shared), T)
    else:
        new = current.copy() if not shared else from_reparam(x0, T)
    return (new, res) if return_info else new


# --- initialization --------------------------------------------------------------


def _block_bounds(N, K):
    base, extra = divmod(N, K)
    sizes = [base + (1 if k < extra else 0) for k in range(K)]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    return starts, np.asarray(sizes, dtype=int)


def _global_cov(X, floor):
    d = X.shape[1]
    return floor_covariance(np.cov(X.T, bias=True).reshape(d, d), variance_floor(X, floor))


def _stats(pts, X, floor):
    d = X.shape[1]
    mean = pts.mean(axis=0)
    if len(pts) <= d:
        return mean, _global_cov(X, floor)
    diff = pts - mean
    return mean, floor_covariance(diff.T @ diff / len(pts), variance_floor(X, floor))


def _default_gamma(T):
    return 10.0 / T


def init_time_blocks(X, t, K: int, covariance_floor: float = 1e-6) -> GmmSeqModel:
    """Split the stream into K consecutive blocks and fit a Gaussian to each.

    Earlier blocks absorb the remainder when N is not a multiple of K.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    N = X.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    T = float(t[-1])
    starts, sizes = _block_bounds(N, K)
    means, covs = zip(*(_stats(X[s:s + n], X, covariance_floor) for s, n in zip(starts, sizes)))
    sig = SigmoidParams(t[starts[1:]], np.ones(K - 1), np.full(K - 1, _default_gamma(T)), T)
    return GmmSeqModel(np.array(means), np.array(covs), sig)


def init_from_partition(X, t, labels, K: int | None = None, covariance_floor: float = 1e-6,
                        config: FitConfig | None = None, *, onset_quantile: float = 0.0,
                        refine: bool = False) -> GmmSeqModel:
    """Model from a hard partition, components ordered by first occurrence.

    Onsets start at the ``onset_quantile`` of each cluster's timestamps (the
    default 0 is the first occurrence) and ceilings at cluster sizes
    relative to the reference cluster. With ``refine`` the sigmoids are then
    fitted to the one-hot labels, which rescues onsets that a stray early
    member pins near zero. A partition with an empty cluster falls back to
    :func:`init_time_blocks`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    labels = np.asarray(labels, dtype=int)
    K = int(labels.max()) + 1 if K is None else K
    counts = np.bincount(labels, minlength=K)
    if np.any(counts == 0):
        logger.info("partition has empty clusters; using time-block initialization")
        return init_time_blocks(X, t, K, covariance_floor)
    T = float(t[-1])
    early = np.array([np.quantile(t[labels == k], onset_quantile) for k in range(K)])
    order = np.argsort(early, kind="stable")
    means, covs = zip(*(_stats(X[labels == k], X, covariance_floor) for k in order))
    sig = SigmoidParams(
        np.clip(early[order[1:]], 0.0, T),
        counts[order[1:]] / counts[order[0]],
        np.full(K - 1, _default_gamma(T)),
        T,
    )
    if refine and K > 1 and T > 0:
        rank = np.empty(K, dtype=int)
        rank[order] = np.arange(K)
        onehot = np.eye(K)[rank[labels]]
        sig = m_step_sigmoid(sig, onehot, t, T, config or FitConfig())
    return GmmSeqModel(np.array(means), np.array(covs), sig)


def _initial_model(scheme, X, t, K, seed, floor, config=None):
    if scheme == "time_blocks":
        return init_time_blocks(X, t, K, floor)
    if scheme == "kmeans":
        labels, _, _ = kmeans_fit(X, K, restarts=1, seed=seed)
    elif scheme == "gmm":
        _, resp, _ = gmm_fit(X, K, restarts=1, seed=seed, covariance_floor=floor)
        labels = np.argmax(resp, axis=1)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return init_from_partition(X, t, labels, K, floor, config,
                               onset_quantile=ONSET_QUANTILE, refine=True)


# --- EM driver -------------------------------------------------------------------


@dataclass
class _Run:
    model: GmmSeqModel
    resp: np.ndarray
    loglik_trace: list
    objective_trace: list
    converged: bool


def _objective(model, ll, prior):
    if prior is None or prior.strength == 0:
        return ll
    return ll - prior.penalty(model.sigmoids.tau)


def run_em(X, t, model: GmmSeqModel, config: FitConfig) -> _Run:
    """EM iterations from a given starting model."""
    prior = config.onset_prior
    T = model.horizon
    resp, ll = _posterior(model, X, t)
    lls = [ll]
    objs = [_objective(model, ll, prior)]
    H = None
    converged = False
    for _ in range(config.max_em_iters):
        means, covs = m_step_gaussian(X, resp, config.covariance_floor)
        if config.freeze_sigmoids:
            sig = model.sigmoids
        else:
            sig, info = m_step_sigmoid(model.sigmoids, resp, t, T, config,
                                       return_info=True, inv_hessian=H)
            H = info.inv_hessian
        model = GmmSeqModel(means, covs, sig)
        resp, ll = _posterior(model, X, t)
        if not np.isfinite(ll):
            break
        lls.append(ll)
        objs.append(_objective(model, ll, prior))
        if abs(objs[-1] - objs[-2]) / (abs(objs[-2]) + 1.0) < config.loglik_rel_tol:
            converged = True
            break
    return _Run(model, resp, lls, objs, converged)


def _one_restart(X, t, K, scheme, index, seed, config):
    init = _initial_model(scheme, X, t, K, seed, config.covariance_floor, config)
    run = run_em(X, t, init, config)
    return scheme, index, run


def _plan(config: FitConfig, K: int):
    plan = []
    for scheme in config.schemes():
        n = 1 if scheme == "time_blocks" or K == 1 else config.restarts
        # seeds depend on the scheme name only, so "all" and a single scheme agree
        key = INIT_SCHEMES.index(scheme)
        children = np.random.SeedSequence(config.seed, spawn_key=(key,)).spawn(n)
        for r, child in enumerate(children):
            plan.append((scheme, r, int(child.generate_state(1)[0])))
    return plan


def fit(X, t, K: int, config: FitConfig | None = None, *, init_model: GmmSeqModel | None = None) -> FitReport:
    """Fit the sequential mixture; best restart by observed log-likelihood.

    Every configured initialization scheme is run ``config.restarts`` times
    (the deterministic time-block scheme once). With ``init_model`` a single
    run starts from that model instead.
    """
    config = config or FitConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    N = X.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    if t.shape[0] != N:
        raise ValueError("features and timestamps differ in length")

    if init_model is not None:
        if init_model.n_components != K:
            raise ValueError("init_model has the wrong number of components")
        results = [("given", 0, run_em(X, t, init_model, config))]
    else:
        plan = _plan(config, K)
        if config.n_jobs != 1 and len(plan) > 1:
            from joblib import Parallel, delayed

            results = Parallel(n_jobs=config.n_jobs)(
                delayed(_one_restart)(X, t, K, s, r, seed, config) for s, r, seed in plan
            )
        else:
            results = [_one_restart(X, t, K, s, r, seed, config) for s, r, seed in plan]

    runs = [
        {"init_scheme": s, "restart": r, "loglik": run.loglik_trace[-1],
         "n_iter": len(run.loglik_trace) - 1, "converged": run.converged}
        for s, r, run in results
    ]
    finite = [(i, res) for i, res in enumerate(results) if np.isfinite(res[2].loglik_trace[-1])]
    if not finite:
        raise FitError(f"all {len(results)} restarts gave non-finite likelihoods: {runs}")
    best_i, (scheme, restart, best) = max(finite, key=lambda item: item[1][2].loglik_trace[-1])

    model, resp = best.model, best.resp
    order = np.arange(K)
    if config.sort_components and K > 1:
        order = model.onset_order()
        model = model.permuted(order)
        resp = resp[:, order]
    labels = np.argmax(resp, axis=1)
    ref = t[labels == 0]
    return FitReport(
        model=model,
        responsibilities=resp,
        loglik_trace=np.asarray(best.loglik_trace),
        converged=best.converged,
        restart_index=restart,
        init_scheme_used=scheme,
        objective_trace=np.asarray(best.objective_trace),
        reference_onset=float(ref[0]) if ref.size else float("nan"),
        shared_gamma=config.shared_gamma,
        component_order=order,
        runs=runs,
    )


def with_overrides(config: FitConfig, **changes) -> FitConfig:
    return replace(config, **changes)
