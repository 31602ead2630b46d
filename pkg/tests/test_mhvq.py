import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msmcvq.dsp import FeatureSequence
from msmcvq.errors import ConfigError, InsufficientDataError, InvalidIndexError, InvalidInputError
from msmcvq.mhvq import (
    EmaState,
    MultiHeadCodebook,
    assign,
    codebook_stats,
    dequantize,
    ema_update,
    init_codebook,
    mean_quantization_error,
    quantize,
    quantize_sequence,
    train_codebook,
)
from msmcvq.synth import SyntheticSpec, gen_synthetic

from oracles import brute_nearest


def brute_indices(x, cb):
    d = cb.head_dim
    out = np.empty((x.shape[0], cb.heads), dtype=np.int64)
    for n, row in enumerate(x):
        for h in range(cb.heads):
            out[n, h] = brute_nearest(row[h * d:(h + 1) * d], cb.codewords[h])[0]
    return out


class TestInit:
    def test_distinct_data_is_permuted(self, rng):
        data = rng.normal(size=(8, 3))
        cb = init_codebook(data, 1, 8, seed=3)
        got = sorted(map(tuple, cb.codewords[0]))
        assert got == sorted(map(tuple, data))

    def test_head_dim(self, rng):
        cb = init_codebook(rng.normal(size=(20, 8)), 4, 5, seed=0)
        assert (cb.heads, cb.num_codewords, cb.head_dim) == (4, 5, 2)

    def test_deterministic(self, rng):
        data = rng.normal(size=(200, 6))
        a = init_codebook(data, 2, 16, seed=11)
        b = init_codebook(data, 2, 16, seed=11)
        assert a.codewords.tobytes() == b.codewords.tobytes()

    def test_no_duplicates_with_enough_distinct_points(self, rng):
        data = np.repeat(rng.normal(size=(10, 4)), 5, axis=0)
        cb = init_codebook(data, 1, 10, seed=0)
        assert len({tuple(c) for c in cb.codewords[0]}) == 10

    def test_errors(self, rng):
        with pytest.raises(ConfigError):
            init_codebook(rng.normal(size=(10, 6)), 4, 2)
        with pytest.raises(InsufficientDataError):
            init_codebook(rng.normal(size=(3, 4)), 1, 4)


class TestQuantize:
    def test_exact_codewords(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 5, 3)))
        x = np.concatenate([cb.codewords[0, 3], cb.codewords[1, 1]])
        r = quantize(x, cb)
        assert r.indices.tolist() == [3, 1]
        np.testing.assert_array_equal(r.quantized, x)
        np.testing.assert_array_equal(r.head_sq_errors, [0.0, 0.0])

    def test_matches_brute_force(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(1, 16, 4)))
        x = rng.normal(size=(100, 4))
        idx, err = assign(x, cb)
        np.testing.assert_array_equal(idx, brute_indices(x, cb))
        for n in range(100):
            assert err[n, 0] == pytest.approx(brute_nearest(x[n], cb.codewords[0])[1], rel=1e-12, abs=1e-15)

    def test_tie_goes_to_lowest_index(self):
        cb = MultiHeadCodebook(np.array([[[1.0, 0.0], [5.0, 5.0], [-1.0, 0.0]]]))
        assert quantize([0.0, 0.0], cb).indices.tolist() == [0]

    def test_near_tie_exact(self):
        # matmul screening would lose this one-ulp difference at large norm
        c = np.array([[[1e8, 0.0], [1e8 + 2.0, 0.0]]])
        x = np.array([1e8 + 1.0 + 2 ** -26, 0.0])
        assert quantize(x, MultiHeadCodebook(c)).indices.tolist() == [1]

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            quantize(np.zeros(5), MultiHeadCodebook(rng.normal(size=(2, 3, 2))))

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(1, 4),
        st.integers(1, 12),
        st.integers(1, 3),
        st.integers(0, 2 ** 31 - 1),
    )
    def test_property_brute_force(self, heads, k, d, seed):
        r = np.random.default_rng(seed)
        cb = MultiHeadCodebook(r.integers(-3, 4, size=(heads, k, d)).astype(float))
        x = r.integers(-4, 5, size=(30, heads * d)).astype(float)
        np.testing.assert_array_equal(assign(x, cb)[0], brute_indices(x, cb))


class TestSequence:
    def test_empty(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 4, 3)))
        tokens, q = quantize_sequence(FeatureSequence(np.zeros((0, 6)), 12.5), cb)
        assert tokens.shape == (0, 2)
        assert q.num_frames == 0

    def test_exact_codeword_sequence(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 4, 3)))
        idx = rng.integers(4, size=(10, 2))
        seq = FeatureSequence(dequantize(idx, cb), 20.0, "upstream")
        tokens, q = quantize_sequence(seq, cb)
        np.testing.assert_array_equal(tokens, idx)
        assert mean_quantization_error(seq.frames, cb) == 0.0
        assert q.frame_shift_ms == 20.0 and q.dim == 6

    def test_mse_matches_per_frame_oracle(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(1, 16, 4)))
        x = rng.normal(size=(1000, 4))
        total = sum(brute_nearest(row, cb.codewords[0])[1] for row in x)
        assert mean_quantization_error(x, cb) == pytest.approx(total / 1000, rel=1e-12)


class TestDequantize:
    def test_row_verbatim(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(1, 8, 5)))
        np.testing.assert_array_equal(dequantize([5], cb), cb.codewords[0, 5])

    def test_zero_codebook(self):
        cb = MultiHeadCodebook(np.zeros((3, 4, 2)))
        np.testing.assert_array_equal(dequantize([1, 3, 0], cb), np.zeros(6))

    def test_out_of_range(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 4, 2)))
        with pytest.raises(InvalidIndexError):
            dequantize([0, 4], cb)
        with pytest.raises(InvalidIndexError):
            dequantize([-1, 0], cb)

    def test_idempotent(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 6, 3)))
        for i in range(6):
            for j in range(6):
                assert quantize(dequantize([i, j], cb), cb).indices.tolist() == [i, j]


class TestEma:
    def test_zero_decay_jumps_to_batch(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(1, 8, 3)))
        v = cb.codewords[0, 2] + 0.01
        st0 = EmaState.for_codebook(cb, decay=0.0)
        new, _ = ema_update(cb, st0, np.repeat(v[None], 100, axis=0))
        np.testing.assert_allclose(new.codewords[0, 2], v, rtol=1e-6)

    def test_empty_batch_is_noop(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 4, 2)))
        st0 = EmaState.for_codebook(cb)
        new, st1 = ema_update(cb, st0, np.zeros((0, 4)))
        assert new is cb and st1 is st0

    def test_inputs_not_mutated(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(2, 4, 2)))
        st0 = EmaState.for_codebook(cb)
        before = (cb.codewords.copy(), st0.cluster_count.copy(), st0.cluster_sum.copy())
        ema_update(cb, st0, rng.normal(size=(50, 4)))
        np.testing.assert_array_equal(cb.codewords, before[0])
        np.testing.assert_array_equal(st0.cluster_count, before[1])
        np.testing.assert_array_equal(st0.cluster_sum, before[2])

    def test_count_and_sum_recurrence(self, rng):
        cb = MultiHeadCodebook(rng.normal(size=(1, 3, 2)))
        st0 = EmaState.for_codebook(cb, decay=0.9)
        batch = rng.normal(size=(40, 2))
        idx = assign(batch, cb)[0][:, 0]
        _, st1 = ema_update(cb, st0, batch)
        for i in range(3):
            n_i = np.sum(idx == i)
            s_i = batch[idx == i].sum(axis=0)
            assert st1.cluster_count[0, i] == pytest.approx(0.9 + 0.1 * n_i, rel=1e-14)
            np.testing.assert_allclose(st1.cluster_sum[0, i], 0.9 * cb.codewords[0, i] + 0.1 * s_i, rtol=1e-13, atol=1e-15)

    def test_unassigned_codeword_barely_moves(self, rng):
        cw = np.array([[[0.0, 0.0], [100.0, 100.0]]])
        cb = MultiHeadCodebook(cw)
        st0 = EmaState(np.full((1, 2), 100.0), cw * 100.0, 0.99)
        new, _ = ema_update(cb, st0, rng.normal(scale=0.1, size=(50, 2)))
        assert np.linalg.norm(new.codewords[0, 1] - cw[0, 1]) / np.linalg.norm(cw[0, 1]) < 1e-6

    def test_point_masses_converge(self, rng):
        masses = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]])
        data = masses[rng.integers(4, size=2000)]
        cb = init_codebook(data, 1, 4, seed=0)
        st0 = EmaState.for_codebook(cb, decay=0.9)
        for _ in range(50):
            cb, st0 = ema_update(cb, st0, data)
        got = cb.codewords[0][np.lexsort(np.round(cb.codewords[0]).T)]
        np.testing.assert_allclose(got, masses[np.lexsort(masses.T)], atol=1e-3)


class TestTrain:
    def test_recovers_cluster_centres(self):
        corpus = gen_synthetic(SyntheticSpec(num_clusters=8, cluster_std=0.01, dim=16, frames_per_utterance=400, num_utterances=50, seed=7))
        cb, report = train_codebook(corpus.frames(), 1, 8, epochs=20, seed=7)
        dist = np.linalg.norm(corpus.centers[:, None] - cb.codewords[0][None], axis=2)
        assert dist.min(axis=1).max() < 0.05
        assert report.final_error <= report.initial_error

    def test_single_codeword_is_mean(self, rng):
        data = rng.normal(loc=3.0, size=(5000, 3))
        cb, _ = train_codebook(data, 1, 1, epochs=50, seed=0)
        np.testing.assert_allclose(cb.codewords[0, 0], data.mean(axis=0), atol=1e-3)

    def test_zero_epochs_is_init(self, rng):
        data = rng.normal(size=(100, 4))
        cb, report = train_codebook(data, 2, 4, epochs=0, seed=5)
        np.testing.assert_array_equal(cb.codewords, init_codebook(data, 2, 4, seed=5).codewords)
        assert report.epoch_errors == []

    def test_deterministic(self, rng):
        data = rng.normal(size=(300, 4))
        a, ra = train_codebook(data, 2, 8, epochs=5, seed=1, batch_size=64, reseed_dead=True)
        b, rb = train_codebook(data, 2, 8, epochs=5, seed=1, batch_size=64, reseed_dead=True)
        assert a.fingerprint() == b.fingerprint()
        assert ra.to_dict() == rb.to_dict()

    def test_report_fields(self, rng):
        _, report = train_codebook(rng.normal(size=(100, 4)), 2, 4, epochs=3, seed=0)
        assert len(report.epoch_errors) == 3
        assert len(report.epoch_entropy) == 3 and len(report.epoch_entropy[0]) == 2
        assert all(0 <= e <= np.log(4) + 1e-12 for row in report.epoch_entropy for e in row)

    @settings(max_examples=25, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(4, 40), st.just(4)), elements=st.floats(-10, 10)),
        st.sampled_from([1, 2, 4]),
        st.integers(1, 4),
        st.booleans(),
    )
    def test_final_error_never_worse(self, data, heads, k, reseed):
        cb, report = train_codebook(data, heads, k, epochs=4, seed=0, batch_size=3, reseed_dead=reseed)
        assert report.final_error <= report.initial_error
        assert mean_quantization_error(data, cb) == pytest.approx(report.final_error, rel=1e-12, abs=1e-12)


class TestStats:
    def test_identical_tokens(self):
        assert codebook_stats(np.full((50, 1), 3), 8)[0].perplexity == pytest.approx(1.0)

    def test_uniform(self):
        stats = codebook_stats(np.arange(64 * 5).reshape(-1, 1) % 64, 64)
        assert abs(stats[0].perplexity - 64) < 1e-9

    def test_two_of_four(self):
        stats = codebook_stats(np.array([[0], [1], [0], [1]]), 4)
        assert stats[0].perplexity == pytest.approx(2.0, rel=1e-12)
        assert stats[0].histogram.tolist() == [2, 2, 0, 0]

    def test_empty(self):
        stats = codebook_stats(np.zeros((0, 2), dtype=int), 4)
        assert [s.perplexity for s in stats] == [1.0, 1.0]
        assert all(s.zero_support for s in stats)

    @given(st.lists(st.integers(0, 9), min_size=1, max_size=100))
    def test_perplexity_bounds(self, toks):
        p = codebook_stats(np.array(toks)[:, None], 10)[0].perplexity
        assert 1.0 - 1e-12 <= p <= 10 + 1e-9
