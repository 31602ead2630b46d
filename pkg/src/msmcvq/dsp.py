"""Waveform front end: pre-emphasis, log-mel spectrograms and mel-cepstral distortion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import InvalidInputError

FEATURE_KINDS = ("mel", "upstream", "stage", "embedding")

LOG_FLOOR = 1e-10
MCD_CONST = 10.0 / math.log(10.0)


@dataclass
class WaveformBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise InvalidInputError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class FeatureSequence:
    """A T x D matrix of frames sampled every ``frame_shift_ms``."""

    frames: np.ndarray
    frame_shift_ms: float
    kind: str = "mel"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames.reshape(-1, 1) if frames.size else frames.reshape(0, 0)
        if frames.ndim != 2:
            raise InvalidInputError(f"frames must be a 2-D matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InvalidInputError("feature sequence contains non-finite entries")
        if not self.frame_shift_ms > 0:
            raise InvalidInputError(f"frame_shift_ms must be positive, got {self.frame_shift_ms}")
        if self.kind not in FEATURE_KINDS:
            raise InvalidInputError(f"unknown feature kind {self.kind!r}")
        self.frames = frames
        self.frame_shift_ms = float(self.frame_shift_ms)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.num_frames

    def with_frames(self, frames: np.ndarray, frame_shift_ms: float | None = None, kind: str | None = None):
        return FeatureSequence(
            frames,
            self.frame_shift_ms if frame_shift_ms is None else frame_shift_ms,
            self.kind if kind is None else kind,
        )


@dataclass(frozen=True)
class StftParams:
    """STFT / mel front-end settings. Defaults are the 16 kHz speech setup."""

    window_length_ms: float = 50.0
    frame_shift_ms: float = 12.5
    fft_size: int = 2048
    pre_emphasis: float = 0.97
    n_mels: int = 80
    fmin_hz: float = 40.0
    fmax_hz: float = 8000.0
    sample_rate_hz: int = 16000
    log_scale: bool = True

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InvalidInputError("; ".join(problems))

    def problems(self, prefix: str = "") -> list[str]:
        out = []

        def bad(name, msg):
            out.append(f"{prefix}{name}: {msg}")

        for name in ("window_length_ms", "frame_shift_ms", "fmin_hz", "fmax_hz"):
            v = getattr(self, name)
            if not _is_real(v) or not math.isfinite(v) or v <= 0:
                bad(name, f"must be a positive finite number, got {v!r}")
        for name in ("fft_size", "n_mels", "sample_rate_hz"):
            v = getattr(self, name)
            if not _is_int(v) or v <= 0:
                bad(name, f"must be a positive integer, got {v!r}")
        if _is_int(self.fft_size) and self.fft_size > 0 and self.fft_size & (self.fft_size - 1):
            bad("fft_size", f"must be a power of two, got {self.fft_size}")
        if not _is_real(self.pre_emphasis) or not 0.0 <= self.pre_emphasis < 1.0:
            bad("pre_emphasis", f"must lie in [0, 1), got {self.pre_emphasis!r}")
        if not isinstance(self.log_scale, bool):
            bad("log_scale", f"must be a boolean, got {self.log_scale!r}")
        if out:
            return out
        if self.window_length_ms < self.frame_shift_ms:
            bad("window_length_ms", "must be >= frame_shift_ms")
        if self.fft_size < self.window_samples:
            bad("fft_size", f"must be >= window length in samples ({self.window_samples})")
        if not self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            bad("fmax_hz", "require 0 < fmin_hz < fmax_hz <= sample_rate_hz / 2")
        return out

    @property
    def window_samples(self) -> int:
        return int(round(self.window_length_ms * self.sample_rate_hz / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.frame_shift_ms * self.sample_rate_hz / 1000.0))


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def pre_emphasize(w: WaveformBuffer, coeff: float = 0.97) -> WaveformBuffer:
    """First-order pre-emphasis y[t] = x[t] - coeff * x[t-1], y[0] = x[0]."""
    if not 0.0 <= coeff < 1.0:
        raise InvalidInputError(f"pre-emphasis coefficient must lie in [0, 1), got {coeff}")
    x = w.samples
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("waveform contains non-finite samples")
    y = x.copy()
    if coeff and x.size > 1:
        y[1:] = x[1:] - coeff * x[:-1]
    return WaveformBuffer(y, w.sample_rate_hz)


def num_frames(num_samples: int, hop: int, window: int) -> int:
    if num_samples < window:
        return 0
    return -(-num_samples // hop)


def frame_signal(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Slice ``x`` into ceil(len/hop) frames of ``window`` samples.

    The signal is reflect-padded by window//2 on the left and as much as needed
    on the right so that frame t is centred on sample t*hop.
    """
    n = x.shape[0]
    t = num_frames(n, hop, window)
    if t == 0:
        return np.zeros((0, window))
    left = window // 2
    right = max(0, (t - 1) * hop + window - n - left)
    padded = np.pad(x, (left, right), mode="reflect")
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    return padded[idx]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft_magnitude(x: np.ndarray, window: int, hop: int, fft_size: int) -> np.ndarray:
    """Magnitude STFT, shape (T, fft_size // 2 + 1)."""
    frames = frame_signal(np.asarray(x, dtype=np.float64), window, hop)
    if frames.shape[0] == 0:
        return np.zeros((0, fft_size // 2 + 1))
    return np.abs(np.fft.rfft(frames * hann_window(window), n=fft_size, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate_hz: int, fft_size: int, n_mels: int, fmin_hz: float, fmax_hz: float) -> np.ndarray:
    """Triangular HTK-scale filterbank, shape (n_mels, fft_size // 2 + 1), peak height 1."""
    bin_freqs = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate_hz)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (centre - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_spectrogram(w: WaveformBuffer, p: StftParams | None = None) -> FeatureSequence:
    p = p or StftParams()
    if w.sample_rate_hz != p.sample_rate_hz:
        raise InvalidInputError(
            f"waveform is {w.sample_rate_hz} Hz but parameters expect {p.sample_rate_hz} Hz; resample first"
        )
    emphasized = pre_emphasize(w, p.pre_emphasis).samples
    mag = stft_magnitude(emphasized, p.window_samples, p.hop_samples, p.fft_size)
    fb = mel_filterbank(p.sample_rate_hz, p.fft_size, p.n_mels, p.fmin_hz, p.fmax_hz)
    mel = mag @ fb.T
    if p.log_scale:
        mel = np.log(np.maximum(mel, LOG_FLOOR))
    return FeatureSequence(mel.reshape(-1, p.n_mels), p.frame_shift_ms, "mel")


def mel_cepstral_distortion(a: FeatureSequence, b: FeatureSequence) -> float:
    """Mean per-frame MCD in dB over aligned cepstra, energy coefficient excluded."""
    fa, fb = _frames(a), _frames(b)
    if fa.shape != fb.shape:
        raise InvalidInputError(f"MCD needs equal shapes, got {fa.shape} and {fb.shape}")
    if fa.shape[0] == 0:
        raise InvalidInputError("MCD is undefined on empty sequences")
    diff = fa[:, 1:] - fb[:, 1:]
    per_frame = MCD_CONST * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return float(np.mean(per_frame))


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, FeatureSequence) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def read_wav(path: str | Path) -> WaveformBuffer:
    """Read a mono 16-bit PCM or 32-bit float WAV file."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise InvalidInputError(f"{path}: unsupported sample format {data.dtype}")
    return WaveformBuffer(samples, rate)


def write_wav(path: str | Path, w: WaveformBuffer, pcm16: bool = False) -> None:
    if pcm16:
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    else:
        data = w.samples.astype("<f4")
    wavfile.write(str(path), w.sample_rate_hz, data)
