import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmcvq.dsp import (
    LOG_FLOOR,
    FeatureSequence,
    StftParams,
    WaveformBuffer,
    log_mel_spectrogram,
    mel_cepstral_distortion,
    mel_filterbank,
    pre_emphasize,
    read_wav,
    stft_magnitude,
    write_wav,
)
from msmcvq.errors import InvalidInputError

from oracles import dft_frame_magnitudes


class TestPreEmphasis:
    def test_constant_signal(self):
        y = pre_emphasize(WaveformBuffer([1.0, 1.0, 1.0], 16000), 0.97).samples
        np.testing.assert_allclose(y, [1.0, 0.03, 0.03], atol=1e-15)

    def test_ramp(self):
        y = pre_emphasize(WaveformBuffer([0.0, 1.0, 2.0, 3.0], 16000), 0.5).samples
        np.testing.assert_array_equal(y, [0.0, 1.0, 1.5, 2.0])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=50))
    def test_zero_coeff_is_identity(self, xs):
        w = WaveformBuffer(np.array(xs), 8000)
        np.testing.assert_array_equal(pre_emphasize(w, 0.0).samples, w.samples)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(0.0, 0.99))
    def test_recurrence_and_length(self, xs, c):
        x = np.array(xs)
        y = pre_emphasize(WaveformBuffer(x, 8000), c).samples
        assert y.shape == x.shape
        assert y[0] == x[0]
        np.testing.assert_allclose(y[1:], x[1:] - c * x[:-1])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            WaveformBuffer([0.0, float("nan")], 16000)


class TestStftParams:
    def test_defaults(self):
        p = StftParams()
        assert (p.window_samples, p.hop_samples) == (800, 200)
        seq = log_mel_spectrogram(WaveformBuffer(np.zeros(16000), 16000), p)
        assert seq.dim == 80
        assert seq.frame_shift_ms == 12.5

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            ({"window_length_ms": 10.0}, "window_length_ms"),
            ({"fft_size": 512}, "fft_size"),
            ({"fmax_hz": 9000.0}, "fmax_hz"),
            ({"fmin_hz": -1.0}, "fmin_hz"),
            ({"n_mels": 0}, "n_mels"),
        ],
    )
    def test_invalid_fields_named(self, kwargs, field):
        with pytest.raises(InvalidInputError, match=field):
            StftParams(**kwargs)


class TestLogMel:
    def test_silence_is_log_floor(self):
        seq = log_mel_spectrogram(WaveformBuffer(np.zeros(16000), 16000))
        assert seq.num_frames == 80
        np.testing.assert_array_equal(seq.frames, math.log(LOG_FLOOR))

    @pytest.mark.parametrize("n", [800, 801, 999, 1600, 16000, 16123])
    def test_frame_count(self, n):
        seq = log_mel_spectrogram(WaveformBuffer(np.ones(n) * 0.1, 16000))
        assert seq.num_frames == math.ceil(n / 200)

    def test_shorter_than_window_is_empty(self):
        seq = log_mel_spectrogram(WaveformBuffer(np.ones(799), 16000))
        assert seq.num_frames == 0 and seq.dim == 80

    def test_rate_mismatch(self):
        with pytest.raises(InvalidInputError, match="resample"):
            log_mel_spectrogram(WaveformBuffer(np.zeros(1000), 8000))

    def test_sine_matches_direct_dft(self):
        t = np.arange(16000) / 16000.0
        x = np.sin(2 * np.pi * 440.0 * t)
        got = stft_magnitude(x, 800, 200, 2048)
        want = dft_frame_magnitudes(x, 800, 200, 2048)
        assert got.shape == want.shape == (80, 1025)
        rel = np.max(np.abs(got - want), axis=1) / np.max(want, axis=1)
        assert rel.max() < 1e-6

    @pytest.mark.parametrize("freq", [250.0, 440.0, 1000.0, 2500.0, 6000.0])
    def test_tone_peak_bin(self, freq):
        t = np.arange(8000) / 16000.0
        mag = stft_magnitude(np.sin(2 * np.pi * freq * t), 800, 200, 2048)
        assert abs(int(np.argmax(mag[10])) - round(freq * 2048 / 16000)) <= 1

    def test_filterbank_shape_and_peak(self):
        fb = mel_filterbank(16000, 2048, 80, 40.0, 8000.0)
        assert fb.shape == (80, 1025)
        assert np.all(fb >= 0) and fb.max() <= 1.0
        assert np.all(fb.sum(axis=1) > 0)


class TestMcd:
    def test_identical(self, rng):
        a = FeatureSequence(rng.normal(size=(20, 5)), 12.5)
        assert mel_cepstral_distortion(a, a) == 0.0

    def test_constant_offset(self, rng):
        a = rng.normal(size=(7, 5))
        b = a.copy()
        b[:, 1:] += 1.0
        got = mel_cepstral_distortion(FeatureSequence(a, 12.5), FeatureSequence(b, 12.5))
        assert got == pytest.approx(10 / math.log(10) * math.sqrt(8), rel=1e-12)
        assert round(got, 2) == 12.28

    def test_single_frame(self):
        got = mel_cepstral_distortion(FeatureSequence([[0.0, 0.0, 0.0]], 12.5), FeatureSequence([[9.0, 3.0, 4.0]], 12.5))
        assert got == pytest.approx(10 / math.log(10) * math.sqrt(50), rel=1e-12)
        assert round(got, 2) == 30.71

    def test_symmetric(self, rng):
        a = FeatureSequence(rng.normal(size=(9, 6)), 12.5)
        b = FeatureSequence(rng.normal(size=(9, 6)), 12.5)
        assert mel_cepstral_distortion(a, b) == mel_cepstral_distortion(b, a)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            mel_cepstral_distortion(FeatureSequence(np.zeros((3, 4)), 12.5), FeatureSequence(np.zeros((4, 4)), 12.5))


class TestWav:
    def test_float32_round_trip(self, tmp_path, rng):
        w = WaveformBuffer(rng.uniform(-0.5, 0.5, size=1000).astype(np.float32), 16000)
        write_wav(tmp_path / "a.wav", w)
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate_hz == 16000
        np.testing.assert_array_equal(back.samples, w.samples)

    def test_int16_round_trip(self, tmp_path, rng):
        w = WaveformBuffer(rng.integers(-32768, 32767, size=500) / 32768.0, 22050)
        write_wav(tmp_path / "a.wav", w, pcm16=True)
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate_hz == 22050
        np.testing.assert_array_equal(back.samples, w.samples)
