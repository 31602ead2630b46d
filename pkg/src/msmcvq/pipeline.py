"""Batch workflows behind the CLI: train, encode, decode, compress, reconstruct."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .associate import compress, compression_report, fit_associate, reconstruct_detailed
from .config import PipelineConfig, dump_config
from .dsp import FeatureSequence
from .errors import ConfigError, InsufficientDataError
from .mhvq import codebook_stats, train_codebook
from .msmc import (
    MSMCR,
    LinearPredictor,
    decode,
    encode,
    fit_decoder,
    ms_loss,
    predict_stages,
    stage_inputs,
    vq_loss,
)

logger = logging.getLogger(__name__)

CODEBOOKS = "codebooks.msar"
DECODER = "decoder.msar"
ASSOCIATE = "associate.msar"
REPORT = "report.json"
CONFIG = "config.yaml"

FEATURE_SUFFIX = ".msf"
TOKEN_SUFFIX = ".tok"
CODE_SUFFIX = ".code"


def list_inputs(paths: Sequence[str | Path], suffix: str) -> list[Path]:
    """Expand directories into their ``suffix`` files, sorted by name."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob(f"*{suffix}")))
        else:
            out.append(p)
    return out


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def train(cfg: PipelineConfig, utterances: Sequence[FeatureSequence], out_dir: str | Path) -> dict:
    """Fit stage codebooks, decoder and associate model; write artifacts and a report."""
    utterances = [u for u in utterances if u.num_frames]
    if not utterances:
        raise InsufficientDataError("training corpus has no frames")
    stages = cfg.stages
    dim = stages.geometries[0].total_dim
    for u in utterances:
        if u.dim != dim:
            raise ConfigError(f"corpus dimension {u.dim} does not match stage dimension {dim}")
    ema = cfg.ema
    books, book_reports = [], []
    for i, g in enumerate(stages.geometries):
        data = np.concatenate([stage_inputs(u, stages)[i].frames for u in utterances])
        cb, rep = train_codebook(
            data, g.heads, g.codewords, ema.epochs, ema.decay, cfg.seed + i,
            eps=ema.eps, batch_size=ema.batch_size or None, reseed_dead=ema.reseed_dead,
        )
        books.append(cb)
        book_reports.append(rep)

    encoded = [encode(u, stages, books) for u in utterances]
    decoder = fit_decoder(encoded, utterances, cfg.ridge_lambda)
    zero_preds = [LinearPredictor.zeros(p.in_dim, p.out_dim) for p in decoder.predictors]

    l_vq = _mean(vq_loss(stage_inputs(u, stages), m) for u, m in zip(utterances, encoded))
    if stages.num_stages > 1:
        l_ms = _mean(ms_loss(predict_stages(m, decoder.predictors), m) for m in encoded)
        l_ms_zero = _mean(ms_loss(predict_stages(m, zero_preds), m) for m in encoded)
    else:
        l_ms = l_ms_zero = 0.0
    l_frame = _mean(
        float(np.mean((decode(m, decoder).frames - u.frames) ** 2)) for u, m in zip(utterances, encoded)
    )

    assoc_cfg = cfg.associate
    model, assoc_report = fit_associate(
        encoded, books, assoc_cfg.codewords, epochs=ema.epochs, decay=ema.decay, seed=cfg.seed + stages.num_stages,
        ridge_lambda=cfg.ridge_lambda, lambda_rec=assoc_cfg.lambda_rec, reseed_dead=ema.reseed_dead,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_codebooks(out / CODEBOOKS, books, ema.decay, ema.eps)
    io.write_decoder(out / DECODER, decoder, books)
    io.write_associate(out / ASSOCIATE, model, books)
    (out / CONFIG).write_text(dump_config(cfg))

    bits = stages.bits_per_frame()
    code_bits = float(np.log2(assoc_cfg.codewords))
    report = {
        "num_utterances": len(utterances),
        "num_frames": int(sum(u.num_frames for u in utterances)),
        "bits_per_frame": bits,
        "associate_bits_per_frame": code_bits,
        "associate_ratio": bits / code_bits if code_bits else None,
        "stages": [
            {
                "rate": r,
                "codebook": rep.to_dict(),
                "perplexity": [
                    h.perplexity for h in codebook_stats(np.concatenate([m.stages[i].tokens for m in encoded]), cb.num_codewords)
                ],
            }
            for i, (r, cb, rep) in enumerate(zip(stages.rates, books, book_reports))
        ],
        "l_vq": l_vq,
        "l_ms": l_ms,
        "l_ms_zero_predictor": l_ms_zero,
        "l_frame": l_frame,
        "associate": assoc_report.to_dict(),
        "artifacts": {name: artifact_hash(out / name) for name in (CODEBOOKS, DECODER, ASSOCIATE)},
    }
    (out / REPORT).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def artifact_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class Artifacts:
    books: list
    decoder: object
    associate: object
    config: PipelineConfig

    @classmethod
    def load(cls, directory: str | Path, cfg: PipelineConfig | None = None) -> "Artifacts":
        from .config import load_config

        d = Path(directory)
        books = io.read_codebooks(d / CODEBOOKS)
        decoder = io.read_decoder(d / DECODER, books) if (d / DECODER).exists() else None
        assoc = io.read_associate(d / ASSOCIATE, books) if (d / ASSOCIATE).exists() else None
        if cfg is None:
            cfg = load_config(d / CONFIG) if (d / CONFIG).exists() else PipelineConfig()
        return cls(books, decoder, assoc, cfg)


def _out_path(out_dir: Path, src: Path, suffix: str) -> Path:
    return out_dir / (src.stem + suffix)


def encode_files(art: Artifacts, inputs: Sequence[Path], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in inputs:
        m = encode(io.read_feature_file(p), art.config.stages, art.books)
        dst = _out_path(out, p, TOKEN_SUFFIX)
        io.write_msmcr(dst, m, art.books)
        written.append(dst)
    return written


def decode_files(art: Artifacts, inputs: Sequence[Path], out_dir: str | Path) -> list[Path]:
    if art.decoder is None:
        raise ConfigError("artifacts have no fitted decoder")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in inputs:
        seq = decode(io.read_msmcr(p, art.books), art.decoder)
        dst = _out_path(out, p, FEATURE_SUFFIX)
        io.write_feature_file(dst, seq)
        written.append(dst)
    return written


def compress_files(art: Artifacts, inputs: Sequence[Path], out_dir: str | Path) -> list[tuple[Path, dict]]:
    if art.associate is None:
        raise ConfigError("artifacts have no associate model")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    k_stage = [cb.num_codewords for cb in art.books]
    for p in inputs:
        m = io.read_msmcr(p, art.books)
        code = compress(m, art.associate)
        dst = _out_path(out, p, CODE_SUFFIX)
        io.write_compact(dst, code)
        rep = compression_report(m, code, k_stage, art.associate.codebook.num_codewords)
        results.append((dst, rep.to_dict()))
    return results


def reconstruct_files(
    art: Artifacts,
    inputs: Sequence[Path],
    out_dir: str | Path,
    reference_dir: str | Path | None = None,
    teacher_forcing: bool = False,
) -> list[tuple[Path, float | None]]:
    """Rebuild token files from compact codes.

    When a reference token file with the same stem exists in
    ``reference_dir`` the per-utterance reconstruction loss is returned.
    Teacher forcing requires the reference.
    """
    if art.associate is None:
        raise ConfigError("artifacts have no associate model")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for p in inputs:
        code = io.read_compact(p, art.associate)
        ref = None
        if reference_dir is not None:
            ref_path = Path(reference_dir) / (p.stem + TOKEN_SUFFIX)
            if ref_path.exists():
                ref = io.read_msmcr(ref_path, art.books)
        if teacher_forcing and ref is None:
            raise ConfigError(f"{p}: teacher forcing needs a reference token file")
        m, preds = reconstruct_detailed(code, art.associate, art.books, teacher=ref if teacher_forcing else None)
        dst = _out_path(out, p, TOKEN_SUFFIX)
        io.write_msmcr(dst, m, art.books)
        l_rec = None
        if ref is not None:
            from .losses import stagewise_mse

            l_rec = stagewise_mse([q.frames for q in preds], [st.quantized.frames for st in ref.stages])
        results.append((dst, l_rec))
    return results


def token_stats(art: Artifacts, msmcrs: Sequence[MSMCR]) -> list[list]:
    out = []
    for i, cb in enumerate(art.books):
        tokens = np.concatenate([m.stages[i].tokens for m in msmcrs]) if msmcrs else np.zeros((0, cb.heads), int)
        out.append(codebook_stats(tokens, cb.num_codewords))
    return out
