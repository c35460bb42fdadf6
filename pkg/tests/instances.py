"""Random problem instances shared by unit and acceptance tests."""

from dataclasses import dataclass

import numpy as np

from seqmix.em import OnsetPrior
from seqmix.model import ReparamVector


@dataclass
class Q1Instance:
    params: ReparamVector
    resp: np.ndarray
    t: np.ndarray
    T: float
    prior: OnsetPrior | None

    @property
    def prior_tuple(self):
        p = self.prior
        return None if p is None else (p.components, p.tau, p.strength)


def random_q1_instance(rng, *, n_max=50, k_max=6, shared=None, with_prior=None):
    N = int(rng.integers(5, n_max + 1))
    K = int(rng.integers(2, k_max + 1))
    m = K - 1
    T = float(rng.uniform(10.0, 1000.0))
    t = np.sort(rng.uniform(0.0, T, N))
    resp = rng.dirichlet(np.ones(K), size=N)
    shared = bool(rng.integers(2)) if shared is None else shared
    with_prior = bool(rng.integers(2)) if with_prior is None else with_prior
    xi = rng.normal(0.0, 1.5, m)
    b = rng.uniform(0.3, 3.0, m)
    g = np.sqrt(rng.uniform(0.5, 50.0, 1 if shared else m) / T)
    prior = None
    if with_prior:
        comps = tuple(sorted(rng.choice(np.arange(1, K), size=int(rng.integers(1, K)), replace=False).tolist()))
        prior = OnsetPrior(comps, tuple(rng.uniform(0, T, len(comps)).tolist()),
                           float(10 ** rng.uniform(-6, -2)))
    return Q1Instance(ReparamVector(xi, b, g, shared_gamma=shared), resp, t, T, prior)
