"""Synthetic corpora with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureSequence, StftParams, WaveformBuffer, log_mel_spectrogram
from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    num_clusters: int = 8
    cluster_std: float = 0.01
    dim: int = 16
    frames_per_utterance: int = 400
    num_utterances: int = 50
    seed: int = 0
    min_center_distance: float = 1.0
    max_segment: int = 8  # frames per constant-label run, in units of segment_multiple
    segment_multiple: int = 1
    mode: str = "gmm"
    frequencies: tuple[float, ...] = (220.0, 440.0, 880.0)
    amplitudes: tuple[float, ...] = (0.3, 0.2, 0.1)
    frame_shift_ms: float = 12.5

    def __post_init__(self):
        for name in ("num_clusters", "dim", "frames_per_utterance", "num_utterances", "max_segment", "segment_multiple"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.cluster_std < 0:
            raise ConfigError(f"cluster_std: must be >= 0, got {self.cluster_std}")
        if self.seed < 0:
            raise ConfigError(f"seed: must be >= 0, got {self.seed}")
        if self.mode not in ("gmm", "sine"):
            raise ConfigError(f"mode: must be 'gmm' or 'sine', got {self.mode!r}")
        if len(self.frequencies) != len(self.amplitudes):
            raise ConfigError("frequencies and amplitudes must have equal length")


@dataclass
class SyntheticCorpus:
    utterances: list[FeatureSequence]
    labels: list[np.ndarray] = field(default_factory=list)
    centers: np.ndarray | None = None
    waveforms: list[WaveformBuffer] = field(default_factory=list)

    def frames(self) -> np.ndarray:
        return np.concatenate([u.frames for u in self.utterances])


def separated_centers(rng: np.random.Generator, k: int, dim: int, min_distance: float) -> np.ndarray:
    """k centers with pairwise distance >= min_distance."""
    scale = 2.0 * min_distance * max(1.0, k ** (1.0 / dim))
    for _ in range(1000):
        c = rng.uniform(-scale, scale, size=(k, dim))
        d2 = np.sum((c[:, None] - c[None]) ** 2, axis=2) + np.eye(k) * min_distance ** 2
        if d2.min() >= min_distance ** 2:
            return c
        scale *= 1.1
    raise ConfigError(f"could not place {k} centers {min_distance} apart in {dim} dimensions")


def _labels(rng: np.random.Generator, n: int, k: int, max_segment: int, multiple: int = 1) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    pos = 0
    while pos < n:
        run = multiple * int(rng.integers(1, max_segment + 1))
        out[pos:pos + run] = rng.integers(k)
        pos += run
    return out


def gen_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "sine":
        return _gen_sine(spec, rng)
    centers = separated_centers(rng, spec.num_clusters, spec.dim, spec.min_center_distance)
    utts, labels = [], []
    for _ in range(spec.num_utterances):
        lab = _labels(rng, spec.frames_per_utterance, spec.num_clusters, spec.max_segment, spec.segment_multiple)
        noise = rng.normal(size=(spec.frames_per_utterance, spec.dim))
        frames = centers[lab] + spec.cluster_std * noise if spec.cluster_std else centers[lab].copy()
        utts.append(FeatureSequence(frames, spec.frame_shift_ms, "upstream"))
        labels.append(lab)
    return SyntheticCorpus(utts, labels, centers)


def _gen_sine(spec: SyntheticSpec, rng: np.random.Generator) -> SyntheticCorpus:
    """Sums of sines with random phases, turned into log-mel features."""
    params = StftParams(frame_shift_ms=spec.frame_shift_ms)
    n = spec.frames_per_utterance * params.hop_samples
    t = np.arange(n) / params.sample_rate_hz
    utts, waves = [], []
    for _ in range(spec.num_utterances):
        x = np.zeros(n)
        for f, a in zip(spec.frequencies, spec.amplitudes):
            x += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        if spec.cluster_std:
            x += spec.cluster_std * rng.normal(size=n)
        w = WaveformBuffer(x, params.sample_rate_hz)
        waves.append(w)
        utts.append(log_mel_spectrogram(w, params))
    return SyntheticCorpus(utts, waveforms=waves)
