"""Multi-stage multi-codebook (MSMC) encoding and decoding.

Stage i holds the input averaged over blocks of r_i frames and quantized by
its own multi-head codebook. Cross-stage prediction and the feature decoder
are ridge-regression linear maps fitted in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsp import FeatureSequence
from .errors import ConfigError, InsufficientDataError, InvalidInputError
from .losses import stagewise_mse
from .mhvq import MultiHeadCodebook, dequantize, quantize_sequence

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class StageGeometry:
    heads: int = 4
    codewords: int = 64
    head_dim: int = 64

    @property
    def total_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def bits_per_vector(self) -> float:
        return self.heads * math.log2(self.codewords)


@dataclass(frozen=True)
class StageConfig:
    """Cumulative downsample rate and codebook geometry for each stage, lowest first."""

    rates: tuple[int, ...] = (1, 4)
    geometries: tuple[StageGeometry, ...] = (StageGeometry(), StageGeometry())

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(self.rates))
        object.__setattr__(self, "geometries", tuple(self.geometries))
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self, prefix: str = "") -> list[str]:
        out = []
        rates = self.rates
        if len(rates) < 1:
            return [f"{prefix}rates: need at least one stage"]
        for i, r in enumerate(rates):
            if not isinstance(r, (int, np.integer)) or isinstance(r, bool) or r < 1:
                out.append(f"{prefix}rates[{i}]: must be a positive integer, got {r!r}")
        if out:
            return out
        if rates[0] != 1:
            out.append(f"{prefix}rates[0]: the lowest stage must have rate 1, got {rates[0]}")
        for i in range(1, len(rates)):
            if rates[i] <= rates[i - 1]:
                out.append(f"{prefix}rates[{i}]: rates must increase strictly")
            elif rates[i] % rates[i - 1]:
                out.append(f"{prefix}rates[{i}]: {rates[i]} is not a multiple of {rates[i - 1]}")
        if len(self.geometries) != len(rates):
            out.append(f"{prefix}geometries: expected {len(rates)} entries, got {len(self.geometries)}")
        for i, g in enumerate(self.geometries):
            for name in ("heads", "codewords", "head_dim"):
                v = getattr(g, name, None)
                if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                    out.append(f"{prefix}geometries[{i}].{name}: must be a positive integer, got {v!r}")
        return out

    @property
    def num_stages(self) -> int:
        return len(self.rates)

    def bits_per_frame(self) -> float:
        """Bits per lowest-stage frame: sum_i H_i * log2(K_i) / r_i."""
        top = self.rates[-1]
        # one division over the common rate keeps power-of-two cases exact
        return sum(g.bits_per_vector * (top // r) for g, r in zip(self.geometries, self.rates)) / top

    def stage_lengths(self, t1: int) -> list[int]:
        return [-(-t1 // r) for r in self.rates]


@dataclass
class Stage:
    tokens: np.ndarray  # (T_i, H_i)
    quantized: FeatureSequence
    rate: int


@dataclass
class MSMCR:
    stages: list[Stage]
    frame_shift_ms: float

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def length(self) -> int:
        return self.stages[0].tokens.shape[0]

    def check(self, books: Sequence[MultiHeadCodebook] | None = None) -> None:
        """Raise InvalidInputError unless every MSMCR invariant holds."""
        t1 = self.length
        for i, st in enumerate(self.stages):
            expected = -(-t1 // st.rate)
            if st.tokens.shape[0] != expected or st.quantized.num_frames != expected:
                raise InvalidInputError(f"stage {i + 1}: length {st.tokens.shape[0]} != ceil({t1}/{st.rate})")
            if books is not None:
                cb = books[i]
                if st.tokens.size and (st.tokens.min() < 0 or st.tokens.max() >= cb.num_codewords):
                    raise InvalidInputError(f"stage {i + 1}: token out of range")
                if expected and not np.array_equal(st.quantized.frames, dequantize(st.tokens, cb)):
                    raise InvalidInputError(f"stage {i + 1}: quantized vectors differ from dequantized tokens")

    def total_bits(self, books_or_cfg) -> float:
        """Exhaustive token count: sum_i T_i * H_i * log2(K_i)."""
        ks = _codeword_counts(books_or_cfg)
        return sum(st.tokens.size * math.log2(k) for st, k in zip(self.stages, ks))


def _codeword_counts(books_or_cfg) -> list[int]:
    if isinstance(books_or_cfg, StageConfig):
        return [g.codewords for g in books_or_cfg.geometries]
    return [cb.num_codewords for cb in books_or_cfg]


def downsample_avg(seq: FeatureSequence, r: int) -> FeatureSequence:
    """Average pooling over blocks of ``r`` frames; the last frame is repeated to fill the final block."""
    if r < 1:
        raise InvalidInputError(f"downsample rate must be >= 1, got {r}")
    x = seq.frames
    if r == 1:
        return seq.with_frames(x.copy())
    t = x.shape[0]
    if t == 0:
        return seq.with_frames(x.copy(), seq.frame_shift_ms * r)
    pad = (-t) % r
    if pad:
        x = np.concatenate([x, np.repeat(x[-1:], pad, axis=0)])
    pooled = x.reshape(-1, r, x.shape[1]).mean(axis=1)
    return seq.with_frames(pooled, seq.frame_shift_ms * r)


def upsample_repeat(seq: FeatureSequence, r: int, target_len: int | None = None) -> FeatureSequence:
    """Repeat each frame ``r`` times and truncate to ``target_len``."""
    if r < 1:
        raise InvalidInputError(f"upsample rate must be >= 1, got {r}")
    t = seq.num_frames
    if target_len is None:
        target_len = t * r
    if target_len > t * r or target_len < 0:
        raise InvalidInputError(f"target_len {target_len} exceeds {t} frames x rate {r}")
    out = np.repeat(seq.frames, r, axis=0)[:target_len]
    return seq.with_frames(out, seq.frame_shift_ms / r)


def resample_nearest(seq: FeatureSequence, target_shift_ms: float, num_frames: int | None = None) -> FeatureSequence:
    """Nearest-frame-centre resampling to a new frame shift.

    Output frame t (centre (t + 0.5) * target) copies the input frame whose
    span [i * src, (i + 1) * src) contains that centre, clamped to the last
    frame. Default length is ceil(T * src / target).
    """
    src = seq.frame_shift_ms
    if not target_shift_ms > 0:
        raise InvalidInputError(f"target shift must be positive, got {target_shift_ms}")
    t = seq.num_frames
    if num_frames is None:
        num_frames = math.ceil(t * src / target_shift_ms - 1e-9) if t else 0
    if t == 0:
        if num_frames:
            raise InvalidInputError("cannot resample an empty sequence to a nonzero length")
        return seq.with_frames(seq.frames.copy(), target_shift_ms)
    centres = (np.arange(num_frames) + 0.5) * target_shift_ms
    idx = np.minimum(np.floor(centres / src).astype(np.int64), t - 1)
    return seq.with_frames(seq.frames[idx], target_shift_ms)


@dataclass
class LinearPredictor:
    """y = W x + b, applied row-wise."""

    weight: np.ndarray  # (D_out, D_in)
    bias: np.ndarray  # (D_out,)
    ridge_lambda: float = DEFAULT_RIDGE

    def __post_init__(self):
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=np.float64))
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ConfigError("predictor weight and bias disagree on output dimension")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise InvalidInputError("predictor has non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, bias=None) -> "LinearPredictor":
        b = np.zeros(out_dim) if bias is None else bias
        return cls(np.zeros((out_dim, in_dim)), b, 0.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise InvalidInputError(f"predictor expects dimension {self.in_dim}, got {x.shape[-1]}")
        return x @ self.weight.T + self.bias

    def __call__(self, seq: FeatureSequence) -> FeatureSequence:
        if seq.num_frames == 0:
            return seq.with_frames(np.zeros((0, self.out_dim)))
        return seq.with_frames(self.apply(seq.frames))


def _matrix(x) -> np.ndarray:
    return x.frames if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)


def fit_stage_predictor(inputs, targets, ridge_lambda: float = DEFAULT_RIDGE) -> LinearPredictor:
    """Ridge least squares for W, b minimizing ||Y - X W^T - b||^2 + lambda ||W||^2 (bias unpenalized)."""
    x, y = _matrix(inputs), _matrix(targets)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidInputError(f"inputs and targets need equal frame counts, got {x.shape} and {y.shape}")
    if x.shape[0] == 0:
        raise InsufficientDataError("cannot fit a predictor on zero frames")
    if ridge_lambda < 0:
        raise ConfigError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite training data")
    x_mean, y_mean = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - x_mean, y - y_mean
    if ridge_lambda > 0:
        d = x.shape[1]
        xc = np.vstack([xc, math.sqrt(ridge_lambda) * np.eye(d)])
        yc = np.vstack([yc, np.zeros((d, y.shape[1]))])
    w_t = np.linalg.lstsq(xc, yc, rcond=None)[0]
    w = w_t.T
    return LinearPredictor(w, y_mean - x_mean @ w_t, float(ridge_lambda))


def stage_inputs(seq: FeatureSequence, cfg: StageConfig) -> list[FeatureSequence]:
    """Pre-quantization sequences: the input average-pooled to every stage rate."""
    return [downsample_avg(seq, r) for r in cfg.rates]


def encode(seq: FeatureSequence, cfg: StageConfig, books: Sequence[MultiHeadCodebook]) -> MSMCR:
    if len(books) != cfg.num_stages:
        raise ConfigError(f"expected {cfg.num_stages} stage codebooks, got {len(books)}")
    for i, (cb, g) in enumerate(zip(books, cfg.geometries)):
        if (cb.heads, cb.num_codewords, cb.head_dim) != (g.heads, g.codewords, g.head_dim):
            raise ConfigError(f"stage {i + 1} codebook geometry does not match the stage config")
        if seq.num_frames and cb.total_dim != seq.dim:
            raise ConfigError(f"stage {i + 1} codebook dimension {cb.total_dim} != input dimension {seq.dim}")
    stages: list[Stage | None] = [None] * cfg.num_stages
    pre = stage_inputs(seq, cfg)
    for i in reversed(range(cfg.num_stages)):
        tokens, quantized = quantize_sequence(pre[i].with_frames(pre[i].frames, kind="stage"), books[i])
        stages[i] = Stage(tokens, quantized, cfg.rates[i])
    return MSMCR(stages, seq.frame_shift_ms)


def align_concat(m: MSMCR) -> FeatureSequence:
    """Upsample every stage to the stage-1 length and concatenate along features."""
    t1 = m.length
    parts = [upsample_repeat(st.quantized, st.rate, t1).frames for st in m.stages]
    return FeatureSequence(np.concatenate(parts, axis=1), m.frame_shift_ms, "stage")


def predictor_input(m_or_stages, j: int) -> FeatureSequence:
    """Stage j+1 quantized sequence upsampled to the length of stage j (0-based j)."""
    stages = m_or_stages.stages if isinstance(m_or_stages, MSMCR) else m_or_stages
    lo, hi = stages[j], stages[j + 1]
    return upsample_repeat(hi.quantized, hi.rate // lo.rate, lo.quantized.num_frames)


def predict_stages(m: MSMCR, predictors: Sequence[LinearPredictor]) -> list[FeatureSequence]:
    """Cross-stage predictions of stages 1..S-1 from the stage above each."""
    if len(predictors) != m.num_stages - 1:
        raise ConfigError(f"expected {m.num_stages - 1} inter-stage predictors, got {len(predictors)}")
    return [predictors[j](predictor_input(m, j)) for j in range(m.num_stages - 1)]


def fit_cross_stage_predictors(corpus: Sequence[MSMCR], ridge_lambda: float = DEFAULT_RIDGE) -> list[LinearPredictor]:
    s = corpus[0].num_stages
    out = []
    for j in range(s - 1):
        xs = np.concatenate([predictor_input(m, j).frames for m in corpus])
        ys = np.concatenate([m.stages[j].quantized.frames for m in corpus])
        out.append(fit_stage_predictor(xs, ys, ridge_lambda))
    return out


@dataclass
class MSMCDecoder:
    """Fitted inter-stage predictors plus the head mapping aligned stages back to features."""

    predictors: list[LinearPredictor] = field(default_factory=list)
    head: LinearPredictor | None = None


def fit_decoder(
    corpus: Sequence[MSMCR], targets: Sequence[FeatureSequence], ridge_lambda: float = DEFAULT_RIDGE
) -> MSMCDecoder:
    if len(corpus) != len(targets) or not corpus:
        raise InsufficientDataError("need one target sequence per encoded utterance")
    xs = np.concatenate([align_concat(m).frames for m in corpus])
    ys = np.concatenate([_matrix(t) for t in targets])
    head = fit_stage_predictor(xs, ys, ridge_lambda)
    return MSMCDecoder(fit_cross_stage_predictors(corpus, ridge_lambda), head)


def decode(m: MSMCR, decoder: MSMCDecoder) -> FeatureSequence:
    if decoder is None or decoder.head is None:
        raise ConfigError("decode needs a fitted head predictor")
    if len(decoder.predictors) != m.num_stages - 1:
        raise ConfigError(f"decoder has {len(decoder.predictors)} inter-stage predictors for {m.num_stages} stages")
    aligned = align_concat(m)
    if aligned.num_frames == 0:
        return FeatureSequence(np.zeros((0, decoder.head.out_dim)), m.frame_shift_ms, "mel")
    if aligned.dim != decoder.head.in_dim:
        raise ConfigError(f"head expects dimension {decoder.head.in_dim}, MSMCR provides {aligned.dim}")
    return FeatureSequence(decoder.head.apply(aligned.frames), m.frame_shift_ms, "mel")


def vq_loss(pre_quant: Sequence[FeatureSequence], post_quant: MSMCR, return_grad: bool = False):
    """(1/S) sum_i mean_t ||pre_i[t] - z_i[t]||^2 with the quantized branch held constant.

    With ``return_grad`` the gradient with respect to each pre-quantization
    sequence is returned as well.
    """
    if len(pre_quant) != post_quant.num_stages:
        raise InvalidInputError(f"{len(pre_quant)} pre-quantization stages for {post_quant.num_stages} quantized")
    return stagewise_mse(
        [_matrix(p) for p in pre_quant], [st.quantized.frames for st in post_quant.stages], return_grad
    )


def ms_loss(predicted: Sequence[FeatureSequence], actual: MSMCR, return_grad: bool = False):
    """(1/(S-1)) sum_j mean_t ||pred_j[t] - z_j[t]||^2 over stages 1..S-1; 0 (with a warning) when S = 1."""
    if len(predicted) != actual.num_stages - 1:
        raise InvalidInputError(f"expected {actual.num_stages - 1} predicted stages, got {len(predicted)}")
    return stagewise_mse(
        [_matrix(p) for p in predicted], [st.quantized.frames for st in actual.stages[:-1]], return_grad
    )
