"""Associate learner: compress an MSMCR into one compact token sequence plus a
global embedding, and rebuild the MSMCR stage by stage from high to low."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsp import FeatureSequence
from .errors import ArtifactMismatchError, ConfigError, InsufficientDataError, InvalidInputError
from .losses import stagewise_mse
from .mhvq import (
    DEFAULT_DECAY,
    MultiHeadCodebook,
    TrainingReport,
    dequantize,
    quantize_sequence,
    train_codebook,
)
from .msmc import (
    DEFAULT_RIDGE,
    MSMCR,
    LinearPredictor,
    Stage,
    StageConfig,
    align_concat,
    downsample_avg,
    fit_stage_predictor,
    upsample_repeat,
)

__all__ = [
    "AssociateModel",
    "CompactCode",
    "align_concat",
    "associate_loss",
    "compress",
    "compression_report",
    "fit_associate",
    "global_embedding",
    "reconstruct",
]


@dataclass
class CompactCode:
    tokens: np.ndarray  # (T_1,)
    codebook_fingerprint: str
    global_embedding: np.ndarray
    frame_shift_ms: float = 12.5

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)
        self.global_embedding = np.asarray(self.global_embedding, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.global_embedding)):
            raise InvalidInputError("global embedding is not finite")


@dataclass
class AssociateModel:
    codebook: MultiHeadCodebook  # single head over the concatenated stage dims
    projector: LinearPredictor  # global embedding -> token dimension
    stage_predictors: list[LinearPredictor]  # index i predicts stage i + 1
    rates: tuple[int, ...] = (1, 4)
    stage_dims: tuple[int, ...] = (256, 256)

    def __post_init__(self):
        if self.codebook.heads != 1:
            raise ConfigError(f"the associate codebook must have one head, got {self.codebook.heads}")
        if len(self.stage_predictors) != len(self.rates):
            raise ConfigError("the predictor cascade must cover every stage")
        self.rates = tuple(int(r) for r in self.rates)
        self.stage_dims = tuple(int(d) for d in self.stage_dims)

    @property
    def token_dim(self) -> int:
        return self.codebook.total_dim

    def fingerprint(self) -> str:
        return self.codebook.fingerprint()


def global_embedding(m: MSMCR) -> np.ndarray:
    """Mean and population standard deviation of the aligned stage rows."""
    if m.length == 0:
        raise InsufficientDataError("global embedding needs at least one frame")
    rows = align_concat(m).frames
    mean = rows.mean(axis=0)
    std = np.sqrt(np.mean((rows - mean) ** 2, axis=0))
    return np.concatenate([mean, std])


def compress(m: MSMCR, model: AssociateModel) -> CompactCode:
    aligned = align_concat(m)
    if aligned.num_frames and aligned.dim != model.token_dim:
        raise ConfigError(f"associate codebook dimension {model.token_dim} != aligned MSMCR dimension {aligned.dim}")
    tokens, _ = quantize_sequence(aligned, model.codebook)
    emb = global_embedding(m) if m.length else np.zeros(2 * model.token_dim)
    return CompactCode(tokens[:, 0], model.fingerprint(), emb, m.frame_shift_ms)


def _base_sequence(code: CompactCode, model: AssociateModel) -> np.ndarray:
    z = dequantize(code.tokens[:, None], model.codebook)
    if code.tokens.size == 0:
        return np.zeros((0, model.token_dim))
    return z + model.projector.apply(code.global_embedding)[None, :]


def _stage_input(base_r: np.ndarray, higher: np.ndarray | None, ratio: int, t: int) -> np.ndarray:
    if higher is None:
        return base_r
    up = np.repeat(higher, ratio, axis=0)[:t]
    return np.concatenate([base_r, up], axis=1)


def _quantized_stage(pred: np.ndarray, cb: MultiHeadCodebook, rate: int, shift: float) -> Stage:
    seq = FeatureSequence(pred.reshape(-1, cb.total_dim), shift * rate, "stage")
    tokens, q = quantize_sequence(seq, cb)
    return Stage(tokens, q, rate)


def reconstruct_detailed(
    code: CompactCode,
    model: AssociateModel,
    stage_books: Sequence[MultiHeadCodebook],
    teacher: MSMCR | None = None,
) -> tuple[MSMCR, list[FeatureSequence]]:
    """Rebuild the MSMCR; also returns the unquantized per-stage predictions.

    With ``teacher`` the input to stage j is the ground-truth quantized stage
    j + 1 rather than the cascade's own output (teacher forcing).
    """
    if code.codebook_fingerprint != model.fingerprint():
        raise ArtifactMismatchError("compact code was produced with a different associate codebook")
    s = len(model.rates)
    if len(stage_books) != s:
        raise ConfigError(f"expected {s} stage codebooks, got {len(stage_books)}")
    base = FeatureSequence(_base_sequence(code, model), code.frame_shift_ms, "stage")
    t1 = base.num_frames
    stages: list[Stage | None] = [None] * s
    preds: list[FeatureSequence | None] = [None] * s
    higher = None
    for i in reversed(range(s)):
        r = model.rates[i]
        ti = -(-t1 // r)
        base_r = downsample_avg(base, r).frames
        ratio = model.rates[i + 1] // r if i + 1 < s else 1
        x = _stage_input(base_r, higher, ratio, ti)
        if ti:
            pred = model.stage_predictors[i].apply(x)
        else:
            pred = np.zeros((0, model.stage_dims[i]))
        preds[i] = FeatureSequence(pred.reshape(ti, model.stage_dims[i]), code.frame_shift_ms * r, "stage")
        stages[i] = _quantized_stage(pred, stage_books[i], r, code.frame_shift_ms)
        higher = (teacher.stages[i] if teacher is not None else stages[i]).quantized.frames
    return MSMCR(stages, code.frame_shift_ms), preds


def reconstruct(
    code: CompactCode,
    model: AssociateModel,
    cfg: StageConfig,
    stage_books: Sequence[MultiHeadCodebook],
    teacher: MSMCR | None = None,
) -> MSMCR:
    if tuple(cfg.rates) != model.rates:
        raise ConfigError(f"model was fitted for rates {model.rates}, config has {tuple(cfg.rates)}")
    return reconstruct_detailed(code, model, stage_books, teacher)[0]


@dataclass
class AssociateFitReport:
    codebook: TrainingReport
    l_vq: float
    l_rec: float
    l_a: float
    lambda_rec: float

    def to_dict(self) -> dict:
        return {
            "codebook": self.codebook.to_dict(),
            "l_vq": self.l_vq,
            "l_rec": self.l_rec,
            "l_a": self.l_a,
            "lambda_rec": self.lambda_rec,
        }


def fit_associate(
    corpus: Sequence[MSMCR],
    stage_books: Sequence[MultiHeadCodebook],
    num_codewords: int = 64,
    *,
    epochs: int = 20,
    decay: float = DEFAULT_DECAY,
    seed: int = 0,
    ridge_lambda: float = DEFAULT_RIDGE,
    lambda_rec: float = 1.0,
    reseed_dead: bool = False,
) -> tuple[AssociateModel, AssociateFitReport]:
    """Train the concatenated-stage codebook, the embedding projector and the
    teacher-forced predictor cascade on a corpus of MSMCRs."""
    corpus = [m for m in corpus if m.length]
    if not corpus:
        raise InsufficientDataError("associate fitting needs at least one non-empty MSMCR")
    rates = tuple(st.rate for st in corpus[0].stages)
    dims = tuple(st.quantized.dim for st in corpus[0].stages)
    aligned = [align_concat(m).frames for m in corpus]
    rows = np.concatenate(aligned)
    cb, cb_report = train_codebook(
        rows, 1, num_codewords, epochs, decay, seed, reseed_dead=reseed_dead
    )

    embeddings = [global_embedding(m) for m in corpus]
    residual = np.concatenate([a - dequantize(quantize_sequence(FeatureSequence(a, 1.0, "stage"), cb)[0], cb)
                               for a in aligned])
    emb_rows = np.concatenate([np.repeat(e[None, :], a.shape[0], axis=0) for e, a in zip(embeddings, aligned)])
    projector = fit_stage_predictor(emb_rows, residual, ridge_lambda)

    s = len(rates)
    predictors: list[LinearPredictor | None] = [None] * s
    codes = []
    for m in corpus:
        tokens, _ = quantize_sequence(FeatureSequence(align_concat(m).frames, m.frame_shift_ms, "stage"), cb)
        codes.append(CompactCode(tokens[:, 0], cb.fingerprint(), global_embedding(m), m.frame_shift_ms))
    provisional = AssociateModel(cb, projector, [LinearPredictor.zeros(1, d) for d in dims], rates, dims)
    bases = [FeatureSequence(_base_sequence(c, provisional), c.frame_shift_ms, "stage") for c in codes]
    for i in reversed(range(s)):
        r = rates[i]
        ratio = rates[i + 1] // r if i + 1 < s else 1
        xs, ys = [], []
        for m, base in zip(corpus, bases):
            ti = m.stages[i].quantized.num_frames
            higher = m.stages[i + 1].quantized.frames if i + 1 < s else None
            xs.append(_stage_input(downsample_avg(base, r).frames, higher, ratio, ti))
            ys.append(m.stages[i].quantized.frames)
        predictors[i] = fit_stage_predictor(np.concatenate(xs), np.concatenate(ys), ridge_lambda)
    model = AssociateModel(cb, projector, predictors, rates, dims)

    l_vq = l_rec = 0.0
    for m, code in zip(corpus, codes):
        _, preds = reconstruct_detailed(code, model, stage_books, teacher=m)
        v, rec, _ = associate_loss(align_concat(m), code, preds, m, lambda_rec, model)
        l_vq += v
        l_rec += rec
    l_vq /= len(corpus)
    l_rec /= len(corpus)
    report = AssociateFitReport(cb_report, l_vq, l_rec, l_vq + lambda_rec * l_rec, lambda_rec)
    return model, report


def associate_loss(
    pre_q,
    code: CompactCode,
    recon,
    target: MSMCR,
    lambda_rec: float = 1.0,
    model: AssociateModel | None = None,
    quantized=None,
) -> tuple[float, float, float]:
    """(L_vq, L_rec, L_a) with L_a = L_vq + lambda_rec * L_rec.

    ``recon`` is either a reconstructed MSMCR or the list of per-stage
    predictions. The quantized compact sequence comes from ``model`` (or is
    passed directly as ``quantized``) and is held constant.
    """
    z_tilde = getattr(pre_q, "frames", pre_q)
    if quantized is None:
        if model is None:
            raise ConfigError("associate_loss needs the model or the quantized sequence")
        quantized = dequantize(code.tokens[:, None], model.codebook)
    quantized = getattr(quantized, "frames", quantized)
    l_vq = stagewise_mse([z_tilde], [quantized])
    pred = [st.quantized for st in recon.stages] if isinstance(recon, MSMCR) else list(recon)
    if len(pred) != target.num_stages:
        raise InvalidInputError(f"{len(pred)} reconstructed stages for {target.num_stages} target stages")
    l_rec = stagewise_mse([getattr(p, "frames", p) for p in pred], [st.quantized.frames for st in target.stages])
    return l_vq, l_rec, l_vq + lambda_rec * l_rec


@dataclass
class CompressionReport:
    msmcr_bits: float
    code_bits: float
    ratio: float
    msmcr_bps: float
    code_bps: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compression_report(m: MSMCR, code: CompactCode, stage_codewords: Sequence[int], code_codewords: int) -> CompressionReport:
    """Bit accounting for the MSMCR and its compact code."""
    msmcr_bits = sum(st.tokens.size * math.log2(k) for st, k in zip(m.stages, stage_codewords))
    code_bits = code.tokens.size * math.log2(code_codewords)
    seconds = m.length * m.frame_shift_ms / 1000.0
    ratio = msmcr_bits / code_bits if code_bits else 0.0
    if seconds == 0:
        return CompressionReport(msmcr_bits, code_bits, ratio, 0.0, 0.0)
    return CompressionReport(msmcr_bits, code_bits, ratio, msmcr_bits / seconds, code_bits / seconds)
