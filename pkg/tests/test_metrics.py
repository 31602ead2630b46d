import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmcvq.errors import InsufficientDataError, InvalidInputError, UndefinedRateError
from msmcvq.metrics import (
    GaussianStats,
    corpus_error_rate,
    edit_distance,
    error_rate,
    frechet_distance,
    gaussian_stats,
    tokenize,
)

from oracles import frechet_1d, levenshtein


def stats_1d(mu, sd):
    return GaussianStats(np.array([mu]), np.array([[sd * sd]]), 2)


class TestGaussianStats:
    def test_pair(self):
        v = np.array([1.0, -2.0, 0.5])
        s = gaussian_stats(np.stack([v, -v]))
        np.testing.assert_array_equal(s.mean, 0.0)
        np.testing.assert_allclose(s.cov, 2 * np.outer(v, v), rtol=1e-15)

    def test_identical_degenerate(self):
        s = gaussian_stats(np.ones((5, 3)))
        assert s.degenerate
        np.testing.assert_array_equal(s.cov, 0.0)

    def test_standard_normal(self):
        x = np.random.default_rng(0).normal(size=(10000, 4))
        s = gaussian_stats(x)
        assert np.abs(s.mean).max() < 0.05
        assert np.abs(np.diag(s.cov) - 1).max() < 0.1
        np.testing.assert_array_equal(s.cov, s.cov.T)

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            gaussian_stats(np.ones((1, 3)))


class TestFrechet:
    def test_self_zero(self, rng):
        s = gaussian_stats(rng.normal(size=(50, 8)))
        assert abs(frechet_distance(s, s)) < 1e-6

    def test_rank_deficient_self_zero(self, rng):
        s = gaussian_stats(rng.normal(size=(20, 64)))
        assert abs(frechet_distance(s, s)) < 1e-6

    def test_shift(self):
        assert frechet_distance(stats_1d(0, 1), stats_1d(1, 1)) == pytest.approx(1.0, abs=1e-12)

    def test_scale(self):
        assert frechet_distance(stats_1d(0, 1), stats_1d(0, 2)) == pytest.approx(1.0, abs=1e-12)

    def test_1d_closed_form(self, rng):
        for _ in range(100):
            mu_a, mu_b = rng.normal(size=2) * 3
            sd_a, sd_b = rng.uniform(0.01, 5, size=2)
            got = frechet_distance(stats_1d(mu_a, sd_a), stats_1d(mu_b, sd_b))
            assert abs(got - frechet_1d(mu_a, sd_a, mu_b, sd_b)) < 1e-10

    def test_diagonal(self, rng):
        mu_a, mu_b = rng.normal(size=(2, 6))
        sd_a, sd_b = rng.uniform(0.1, 3, size=(2, 6))
        a = GaussianStats(mu_a, np.diag(sd_a ** 2), 2)
        b = GaussianStats(mu_b, np.diag(sd_b ** 2), 2)
        want = sum(frechet_1d(*args) for args in zip(mu_a, sd_a, mu_b, sd_b))
        assert abs(frechet_distance(a, b) - want) < 1e-8

    def test_scale_exact(self, rng):
        a, b = gaussian_stats(rng.normal(size=(30, 4))), gaussian_stats(rng.normal(size=(30, 4)) + 1)
        assert frechet_distance(a, b, 10.0) == 10.0 * frechet_distance(a, b)

    def test_symmetric_nonnegative(self, rng):
        a, b = gaussian_stats(rng.normal(size=(30, 5))), gaussian_stats(rng.normal(size=(40, 5)) * 2)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-10)
        assert frechet_distance(a, b) > 0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            frechet_distance(gaussian_stats(rng.normal(size=(5, 2))), gaussian_stats(rng.normal(size=(5, 3))))


class TestEditDistance:
    def test_identical(self):
        assert edit_distance("abc", "abc").total == 0

    def test_kitten(self):
        ops = edit_distance("kitten", "sitting")
        assert ops.total == 3
        assert (ops.substitutions, ops.deletions, ops.insertions) == (2, 0, 1)

    def test_empty_ref(self):
        ops = edit_distance("", "abcd")
        assert (ops.substitutions, ops.deletions, ops.insertions) == (0, 0, 4)

    def test_prefers_substitution(self):
        assert edit_distance("ab", "ba").substitutions == 2

    @settings(max_examples=200)
    @given(st.text("abc", max_size=8), st.text("abc", max_size=8), st.text("abc", max_size=8))
    def test_metric_properties(self, a, b, c):
        dab, dba = edit_distance(a, b).total, edit_distance(b, a).total
        assert dab == dba == levenshtein(a, b)
        assert edit_distance(a, c).total <= dab + edit_distance(b, c).total


class TestRates:
    def test_identical(self):
        assert error_rate(list("abcd"), list("abcd")) == 0.0

    def test_one_substitution(self):
        ref = list("abcdefghij")
        assert error_rate(ref, list("abcdefghiX")) == pytest.approx(0.1)

    def test_all_insertions(self):
        ref = list("abcde")
        assert error_rate(ref, ref + ref) == 1.0

    def test_empty_ref(self):
        with pytest.raises(UndefinedRateError):
            error_rate([], ["a"])

    def test_pooled(self):
        assert corpus_error_rate([(list("abcde"), list("abcdX")), (list("abcde"), list("abcde"))]) == pytest.approx(0.1)

    def test_pooling_differs_from_mean(self):
        pairs = [(["a"], ["b"]), (list("abcdefghi"), list("abcdefghi"))]
        assert corpus_error_rate(pairs) == pytest.approx(0.1)
        assert np.mean([error_rate(r, h) for r, h in pairs]) == pytest.approx(0.5)

    def test_empty_corpus(self):
        with pytest.raises(UndefinedRateError):
            corpus_error_rate([])

    def test_tokenize(self):
        assert tokenize("a b c") == ["a", "b", "c"]
        assert tokenize("sil ah b", "phone") == ["sil", "ah", "b"]
        with pytest.raises(InvalidInputError):
            tokenize("x", "byte")
