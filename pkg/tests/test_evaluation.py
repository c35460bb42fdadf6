import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ari_pairs
from seqmix.em import FitReport
from seqmix.evaluation import (
    adjusted_rand_index,
    aggregate_onset_histogram,
    match_onsets,
    onset_entropy,
    precision,
    recall,
    write_metric_table,
)
from seqmix.model import GmmSeqModel, SigmoidParams

labels = st.lists(st.integers(0, 4), min_size=2, max_size=30)


class TestMatching:
    def test_exact(self):
        r = match_onsets([1.0, 5.0, 9.0], [1.0, 5.0, 9.0])
        assert (r.tp, r.fp, r.fn) == (3, 0, 0)

    def test_empty_estimates(self):
        r = match_onsets([], [1.0, 2.0])
        assert (r.tp, r.fp, r.fn) == (0, 0, 2)

    def test_hand_enumeration(self):
        r = match_onsets([10.4, 10.6, 25.0], [10.0, 20.0], tol=0.5)
        assert (r.tp, r.fp, r.fn) == (1, 2, 1)
        assert r.per_level_hits.tolist() == [1, 0]

    def test_nearer_truth_credited(self):
        r = match_onsets([10.3], [10.0, 10.5], tol=0.5)
        assert r.per_level_hits.tolist() == [0, 1]

    def test_window_is_closed(self):
        assert match_onsets([10.5], [10.0]).tp == 1

    @given(st.lists(st.floats(0, 100), max_size=12), st.randoms())
    def test_order_invariant(self, est, rnd):
        truth = [10.0, 40.0, 70.0]
        shuffled = list(est)
        rnd.shuffle(shuffled)
        a, b = match_onsets(est, truth), match_onsets(shuffled, truth)
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)
        assert a.tp + a.fp == len(est) and a.fn <= len(truth)

    def test_validation(self):
        with pytest.raises(ValueError):
            match_onsets([1.0], [])
        with pytest.raises(ValueError):
            match_onsets([1.0], [1.0], tol=0)


class TestRatios:
    def _r(self, tp, fp, fn):
        from seqmix.evaluation import OnsetMatchResult

        return OnsetMatchResult(tp, fp, fn, np.zeros(7, dtype=int))

    def test_precision(self):
        assert precision(self._r(7, 0, 0)) == 1.0
        assert precision(self._r(0, 5, 7)) == 0.0
        undefined = precision(self._r(0, 0, 7))
        assert undefined == 0.0 and undefined.undefined

    def test_recall(self):
        assert recall(self._r(5, 2, 0)) == 1.0
        assert round(recall(self._r(6, 0, 1)), 3) == 0.857
        assert recall(self._r(0, 3, 4)) == 0.0
        assert recall(self._r(0, 0, 0)).undefined


class TestEntropy:
    def test_uniform_seven_levels(self):
        assert round(onset_entropy([1] * 7, 7), 2) == 1.00

    def test_doubled_hits(self):
        assert onset_entropy([2] * 7, 7, n_estimated=14) == pytest.approx(1.0)

    def test_point_mass(self):
        assert onset_entropy([0, 5, 0], 3) == 0.0

    def test_false_positives_lower_the_sum(self):
        # three of six estimates hit; p sums to 1/2
        h = onset_entropy([1, 1, 1], 3, n_estimated=6)
        assert h == pytest.approx(-3 * (1 / 6) * np.log2(1 / 6) / np.log2(3))

    def test_nothing_estimated(self):
        out = onset_entropy([0, 0], 2)
        assert out == 0.0 and out.undefined

    def test_k_norm(self):
        with pytest.raises(ValueError):
            onset_entropy([1], 1)

    @given(st.lists(st.integers(0, 20), min_size=2, max_size=10))
    def test_range(self, hits):
        assert 0.0 <= onset_entropy(hits, len(hits)) <= 1.0 + 1e-12


class TestAri:
    def test_matches_pair_counting_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 31))
            a = rng.integers(0, rng.integers(1, 6), n)
            b = rng.integers(0, rng.integers(1, 6), n)
            assert adjusted_rand_index(a, b) == float(ari_pairs(a.tolist(), b.tolist()))

    def test_identical_up_to_relabelling(self):
        assert adjusted_rand_index([0, 0, 1, 2], [5, 5, 3, 9]) == 1.0

    def test_constant_partition(self):
        assert adjusted_rand_index([0] * 6, [0, 1, 2, 0, 1, 2]) == 0.0

    def test_small_fixture(self):
        assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == float(ari_pairs([1, 1, 2, 2], [1, 2, 1, 2]))
        assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == -0.5

    def test_too_short(self):
        with pytest.raises(ValueError):
            adjusted_rand_index([0], [0])

    @settings(max_examples=80)
    @given(st.data())
    def test_symmetry_and_permutation(self, data):
        a = data.draw(labels)
        b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
        perm = {k: (3 * k + 1) % 5 for k in range(5)}
        v = adjusted_rand_index(a, b)
        assert v == adjusted_rand_index(b, a)
        assert v == adjusted_rand_index([perm[x] for x in a], b)
        assert v <= 1.0


def _report_with_onsets(ref, tau, T=100.0):
    K = len(tau) + 1
    sig = SigmoidParams(np.asarray(tau, dtype=float), np.ones(K - 1), np.ones(K - 1), T)
    model = GmmSeqModel(np.zeros((K, 1)), np.ones((K, 1, 1)), sig)
    return FitReport(model, np.ones((1, K)) / K, np.array([0.0]), True, 0, "gmm", np.array([0.0]),
                     reference_onset=ref)


class TestHistogram:
    def test_ninety_nine_onsets(self):
        rng = np.random.default_rng(1)
        reports = [_report_with_onsets(0.5, np.sort(rng.uniform(0, 100, K - 1))) for K in range(4, 15)]
        h = aggregate_onset_histogram(reports, 5.0, 100.0)
        assert h.count == 99
        assert h.mass.sum() == pytest.approx(1.0)

    def test_single_bin(self):
        h = aggregate_onset_histogram([_report_with_onsets(11.0, [12.0, 13.0])], 10.0, 100.0)
        assert h.mass[1] == 1.0 and h.mass.sum() == 1.0

    def test_empty(self):
        h = aggregate_onset_histogram([], 10.0, 100.0)
        assert h.count == 0 and h.mass.sum() == 0.0

    def test_csv(self, tmp_path):
        h = aggregate_onset_histogram([_report_with_onsets(0.0, [50.0])], 25.0, 100.0)
        h.write_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "bin_center,mass" and lines[1] == "12.5,0.5"


def test_metric_table(tmp_path):
    write_metric_table([("gmmseq", 1.0, 0.5, 0.25, 0.9)], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "method,precision,recall,entropy,ari\ngmmseq,1.0,0.5,0.25,0.9\n"
