import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gaussian_logpdf_explicit, proportions_loop
from seqmix.baselines import _logpdfs
from seqmix.model import (
    GmmSeqModel,
    NotPositiveDefiniteError,
    ReparamVector,
    SigmoidParams,
    activation,
    from_reparam,
    gaussian_logpdf,
    observed_loglik,
    proportions,
    to_reparam,
)
from seqmix.synthetic import generate_dataset


def _random_spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.5 * np.eye(d)


def _sig(tau=(10.0,), beta=(2.0,), gamma=(0.3,), T=100.0):
    return SigmoidParams(np.array(tau), np.array(beta), np.array(gamma), T)


class TestActivation:
    def test_reference_is_one(self):
        assert activation(3.0, 0, _sig()) == 1.0

    def test_midpoint(self):
        assert activation(10.0, 1, _sig()) == pytest.approx(1.0)

    def test_flat_sigmoid(self):
        sig = _sig(gamma=(0.0,))
        assert np.all(activation(np.array([0.0, 50.0, 100.0]), 1, sig) == 1.0)

    def test_saturation_without_overflow(self):
        sig = _sig(gamma=(1e6,), T=1e9)
        with np.errstate(over="raise"):
            hi = activation(10.0 + 1e4 / 1e6, 1, sig)
            lo = activation(-1e9, 1, sig)
        assert abs(hi - 2.0) < 1e-12
        assert lo == 0.0

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            activation(0.0, 2, _sig())

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 5))
    def test_monotone_in_time(self, a, b, g):
        sig = _sig(gamma=(g,))
        lo, hi = sorted((a, b))
        assert activation(lo, 1, sig) <= activation(hi, 1, sig)


class TestProportions:
    def test_single_component(self):
        sig = SigmoidParams(np.empty(0), np.empty(0), np.empty(0), 10.0)
        assert proportions(3.0, sig).tolist() == [1.0]

    def test_equal_activations(self):
        sig = _sig(tau=(5.0,), beta=(2.0,), gamma=(0.7,))
        np.testing.assert_allclose(proportions(5.0, sig), [0.5, 0.5])

    def test_default_parameters_match_loop(self):
        ds, truth = generate_dataset(seed=4)
        sig = truth.model.sigmoids
        # onsets are read off the generated timestamps at 0-based 487, 1989, 2471
        np.testing.assert_array_equal(sig.tau, ds.timestamps[[487, 1989, 2471]])
        tq = np.array([0.0, 100.0, sig.tau[0], 1000.0, 1500.0, 2500.0, ds.duration])
        ref = proportions_loop(tq, sig.tau, sig.beta, sig.gamma)
        np.testing.assert_allclose(proportions(tq, sig), ref, rtol=1e-12, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 7))
    def test_rows_sum_to_one(self, seed, K):
        rng = np.random.default_rng(seed)
        T = rng.uniform(1, 1e4)
        sig = SigmoidParams(rng.uniform(0, T, K - 1), rng.exponential(5, K - 1),
                            rng.exponential(1, K - 1), T)
        pi = proportions(np.linspace(0, T, 50), sig)
        assert np.all(np.abs(pi.sum(axis=1) - 1) < 1e-12)
        assert np.all(pi >= 0) and np.all(pi <= 1)


class TestGaussian:
    def test_peak(self):
        assert gaussian_logpdf([0.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)

    def test_one_dimensional(self):
        s = 1.7
        val = gaussian_logpdf([2.0 + s], [2.0], [[s * s]])
        assert val == pytest.approx(-0.5 - math.log(s * math.sqrt(2 * math.pi)), rel=1e-14)

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = int(rng.integers(1, 6))
            S = _random_spd(rng, d)
            mu, x = rng.normal(size=d), rng.normal(size=d) * 2
            assert gaussian_logpdf(x, mu, S) == pytest.approx(gaussian_logpdf_explicit(x, mu, S), rel=1e-10)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefiniteError):
            gaussian_logpdf([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


class TestLikelihood:
    def _model(self, rng, K, d, T=10.0):
        sig = SigmoidParams(rng.uniform(0, T, K - 1), rng.uniform(0.2, 3, K - 1), rng.uniform(0, 2, K - 1), T)
        return GmmSeqModel(rng.normal(size=(K, d)), np.array([_random_spd(rng, d) for _ in range(K)]), sig)

    def test_single_component(self):
        rng = np.random.default_rng(1)
        m = self._model(rng, 1, 3)
        X, t = rng.normal(size=(20, 3)), np.sort(rng.uniform(0, 10, 20))
        ref = sum(gaussian_logpdf_explicit(x, m.means[0], m.covariances[0]) for x in X)
        assert observed_loglik(m, X, t) == pytest.approx(ref, rel=1e-12)

    def test_constant_weights_reduce_to_gmm(self):
        rng = np.random.default_rng(2)
        m = self._model(rng, 3, 2)
        m.sigmoids.gamma[:] = 0.0
        X, t = rng.normal(size=(30, 2)), np.sort(rng.uniform(0, 10, 30))
        w = np.concatenate([[1.0], m.sigmoids.beta / 2]) / (1 + m.sigmoids.beta.sum() / 2)
        dens = np.exp(_logpdfs(X, m.means, m.covariances))
        assert observed_loglik(m, X, t) == pytest.approx(np.log(dens @ w).sum(), rel=1e-12)

    def test_relabel_invariance(self):
        rng = np.random.default_rng(3)
        m = self._model(rng, 4, 2)
        X, t = rng.normal(size=(25, 2)), np.sort(rng.uniform(0, 10, 25))
        assert observed_loglik(m.permuted([0, 3, 1, 2]), X, t) == pytest.approx(observed_loglik(m, X, t), rel=1e-13)

    def test_generating_beats_shifted_onsets(self):
        ds, truth = generate_dataset(seed=0)
        m = truth.model
        shifted = m.copy()
        shifted.sigmoids.tau[:] = np.minimum(m.sigmoids.tau + m.horizon / 10, m.horizon)
        X, t = ds.features, ds.timestamps
        assert observed_loglik(m, X, t) > observed_loglik(shifted, X, t)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(4)
        m = self._model(rng, 2, 2)
        with pytest.raises(ValueError):
            observed_loglik(m, np.zeros((3, 3)), np.arange(3.0))


class TestTypes:
    def test_constraints(self):
        with pytest.raises(ValueError):
            SigmoidParams(np.array([11.0]), np.array([1.0]), np.array([1.0]), 10.0)
        with pytest.raises(ValueError):
            SigmoidParams(np.array([1.0]), np.array([-1.0]), np.array([1.0]), 10.0)
        with pytest.raises(ValueError):
            SigmoidParams(np.array([1.0]), np.array([1.0]), np.array([-0.1]), 10.0)

    @given(st.lists(st.tuples(st.floats(1e-3, 1 - 1e-3), st.floats(1e-3, 1e3), st.floats(1e-4, 10.0)),
                    min_size=1, max_size=6), st.floats(1.0, 1e5))
    def test_reparam_round_trip(self, rows, T):
        frac, beta, gamma = map(np.array, zip(*rows))
        sig = SigmoidParams(frac * T, beta, gamma, T)
        back = from_reparam(to_reparam(sig), T)
        np.testing.assert_allclose(back.tau, sig.tau, rtol=1e-10)
        np.testing.assert_allclose(back.beta, sig.beta, rtol=1e-10)
        np.testing.assert_allclose(back.gamma, sig.gamma, rtol=1e-10)

    def test_boundary_clamp(self):
        sig = SigmoidParams(np.array([0.0, 10.0]), np.ones(2), np.ones(2), 10.0)
        np.testing.assert_array_equal(to_reparam(sig).xi, [-36.0, 36.0])

    def test_flatten_round_trip(self):
        p = ReparamVector([1.0, 2.0], [3.0, 4.0], [5.0], shared_gamma=True)
        q = ReparamVector.unflatten(p.flatten(), 2, True)
        assert q.flatten().tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]

    def test_json_round_trip_exact(self):
        rng = np.random.default_rng(5)
        m = TestLikelihood()._model(rng, 3, 2)
        back = GmmSeqModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.means, m.means)
        np.testing.assert_array_equal(back.covariances, m.covariances)
        np.testing.assert_array_equal(back.sigmoids.tau, m.sigmoids.tau)
        assert set(m.to_dict()) == {"K", "d", "means", "covariances", "tau", "beta", "gamma", "T"}

    def test_onset_order(self):
        sig = SigmoidParams(np.array([5.0, 1.0, 3.0]), np.ones(3), np.ones(3), 10.0)
        m = GmmSeqModel(np.zeros((4, 1)), np.ones((4, 1, 1)), sig)
        assert m.onset_order().tolist() == [0, 2, 3, 1]
        assert m.permuted(m.onset_order()).sigmoids.tau.tolist() == [1.0, 3.0, 5.0]
