"""Binary file formats.

Feature files (``MSFQ``) hold one FeatureSequence: a fixed little-endian
header followed by T*D float32 values, row-major.

Every other artifact (codebooks, predictors, associate models, token files)
uses the ``MSAR`` container: magic, u32 version, u32 header length, a JSON
header with sorted keys, then the arrays it lists, little-endian and
contiguous. Identical content always serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .associate import AssociateModel, CompactCode
from .dsp import FEATURE_KINDS, FeatureSequence
from .errors import ArtifactMismatchError, BadMagicError, FileFormatError, TruncatedPayloadError, VersionMismatchError
from .mhvq import DEFAULT_DECAY, DEFAULT_EPS, MultiHeadCodebook
from .msmc import MSMCR, LinearPredictor, MSMCDecoder, Stage

FEATURE_MAGIC = b"MSFQ"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIBIII")

ARTIFACT_MAGIC = b"MSAR"
ARTIFACT_VERSION = 1
_ARTIFACT_PREFIX = struct.Struct("<4sII")


def write_feature_file(path, seq: FeatureSequence) -> None:
    shift_us = int(round(seq.frame_shift_ms * 1000.0))
    t, d = seq.frames.shape
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, FEATURE_KINDS.index(seq.kind), t, d, shift_us)
    Path(path).write_bytes(header + np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def read_feature_file(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: not a feature file (bad magic)")
    if len(raw) < _FEATURE_HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, kind, t, d, shift_us = _FEATURE_HEADER.unpack_from(raw)
    if version != FEATURE_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FEATURE_VERSION}")
    if kind >= len(FEATURE_KINDS):
        raise FileFormatError(f"{path}: unknown kind code {kind}")
    payload = raw[_FEATURE_HEADER.size:]
    if len(payload) != 4 * t * d:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, header declares {4 * t * d}")
    frames = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, d)
    return FeatureSequence(frames, shift_us / 1000.0, FEATURE_KINDS[kind])


def write_artifact(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    specs, blobs = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        specs.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": specs}, sort_keys=True).encode()
    Path(path).write_bytes(_ARTIFACT_PREFIX.pack(ARTIFACT_MAGIC, ARTIFACT_VERSION, len(header)) + header + b"".join(blobs))


def read_artifact(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != ARTIFACT_MAGIC:
        raise BadMagicError(f"{path}: not a toolkit artifact (bad magic)")
    if len(raw) < _ARTIFACT_PREFIX.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, hlen = _ARTIFACT_PREFIX.unpack_from(raw)
    if version != ARTIFACT_VERSION:
        raise VersionMismatchError(f"{path}: artifact version {version}, expected {ARTIFACT_VERSION}")
    start = _ARTIFACT_PREFIX.size
    if len(raw) < start + hlen:
        raise TruncatedPayloadError(f"{path}: truncated header")
    header = json.loads(raw[start:start + hlen])
    if kind is not None and header["kind"] != kind:
        raise FileFormatError(f"{path}: expected a {kind} artifact, found {header['kind']}")
    pos = start + hlen
    arrays = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"])) * 8
        if len(raw) < pos + n:
            raise TruncatedPayloadError(f"{path}: array {spec['name']} is truncated")
        arrays[spec["name"]] = np.frombuffer(raw[pos:pos + n], dtype=spec["dtype"]).reshape(spec["shape"]).copy()
        pos += n
    if pos != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return header["meta"], arrays


# codebooks


def _codebook_arrays(books, prefix="book"):
    return {f"{prefix}{i}": cb.codewords for i, cb in enumerate(books)}


def write_codebooks(path, books, decay: float = DEFAULT_DECAY, eps: float = DEFAULT_EPS) -> None:
    meta = {
        "geometry": [[cb.heads, cb.num_codewords, cb.head_dim] for cb in books],
        "decay": decay,
        "eps": eps,
        "fingerprints": [cb.fingerprint() for cb in books],
    }
    write_artifact(path, "codebooks", meta, _codebook_arrays(books))


def read_codebooks(path) -> list[MultiHeadCodebook]:
    meta, arrays = read_artifact(path, "codebooks")
    books = [MultiHeadCodebook(arrays[f"book{i}"]) for i in range(len(meta["geometry"]))]
    for cb, fp in zip(books, meta["fingerprints"]):
        if cb.fingerprint() != fp:
            raise ArtifactMismatchError(f"{path}: codebook content does not match its fingerprint")
    return books


def books_fingerprint(books) -> str:
    import hashlib

    h = hashlib.sha256()
    for cb in books:
        h.update(cb.fingerprint().encode())
    return h.hexdigest()


# predictors


def _predictor_arrays(p: LinearPredictor, name: str) -> dict:
    return {f"{name}.weight": p.weight, f"{name}.bias": p.bias}


def _predictor(arrays, meta, name: str) -> LinearPredictor:
    return LinearPredictor(arrays[f"{name}.weight"], arrays[f"{name}.bias"], meta["ridge"][name])


def write_decoder(path, decoder: MSMCDecoder, books) -> None:
    arrays, ridge = {}, {}
    for j, p in enumerate(decoder.predictors):
        arrays.update(_predictor_arrays(p, f"pred{j}"))
        ridge[f"pred{j}"] = p.ridge_lambda
    arrays.update(_predictor_arrays(decoder.head, "head"))
    ridge["head"] = decoder.head.ridge_lambda
    meta = {"num_predictors": len(decoder.predictors), "ridge": ridge, "books": books_fingerprint(books)}
    write_artifact(path, "decoder", meta, arrays)


def read_decoder(path, books=None) -> MSMCDecoder:
    meta, arrays = read_artifact(path, "decoder")
    if books is not None and meta["books"] != books_fingerprint(books):
        raise ArtifactMismatchError(f"{path}: decoder was fitted against different codebooks")
    preds = [_predictor(arrays, meta, f"pred{j}") for j in range(meta["num_predictors"])]
    return MSMCDecoder(preds, _predictor(arrays, meta, "head"))


def write_associate(path, model: AssociateModel, books) -> None:
    arrays = {"codebook": model.codebook.codewords}
    ridge = {"projector": model.projector.ridge_lambda}
    arrays.update(_predictor_arrays(model.projector, "projector"))
    for i, p in enumerate(model.stage_predictors):
        arrays.update(_predictor_arrays(p, f"stage{i}"))
        ridge[f"stage{i}"] = p.ridge_lambda
    meta = {
        "rates": list(model.rates),
        "stage_dims": list(model.stage_dims),
        "ridge": ridge,
        "fingerprint": model.fingerprint(),
        "books": books_fingerprint(books),
    }
    write_artifact(path, "associate", meta, arrays)


def read_associate(path, books=None) -> AssociateModel:
    meta, arrays = read_artifact(path, "associate")
    if books is not None and meta["books"] != books_fingerprint(books):
        raise ArtifactMismatchError(f"{path}: associate model was fitted against different codebooks")
    model = AssociateModel(
        MultiHeadCodebook(arrays["codebook"]),
        _predictor(arrays, meta, "projector"),
        [_predictor(arrays, meta, f"stage{i}") for i in range(len(meta["rates"]))],
        tuple(meta["rates"]),
        tuple(meta["stage_dims"]),
    )
    if model.fingerprint() != meta["fingerprint"]:
        raise ArtifactMismatchError(f"{path}: associate codebook does not match its fingerprint")
    return model


# token files


def write_msmcr(path, m: MSMCR, books) -> None:
    meta = {
        "rates": [st.rate for st in m.stages],
        "frame_shift_ms": m.frame_shift_ms,
        "books": books_fingerprint(books),
    }
    write_artifact(path, "msmcr", meta, {f"tokens{i}": st.tokens for i, st in enumerate(m.stages)})


def read_msmcr(path, books) -> MSMCR:
    """Load token matrices and rebuild quantized vectors; refuses mismatched codebooks."""
    from .mhvq import dequantize

    meta, arrays = read_artifact(path, "msmcr")
    if meta["books"] != books_fingerprint(books):
        raise ArtifactMismatchError(f"{path}: tokens were produced with different codebooks")
    shift = meta["frame_shift_ms"]
    stages = []
    for i, (r, cb) in enumerate(zip(meta["rates"], books)):
        tokens = arrays[f"tokens{i}"].reshape(-1, cb.heads)
        frames = dequantize(tokens, cb) if tokens.shape[0] else np.zeros((0, cb.total_dim))
        stages.append(Stage(tokens, FeatureSequence(frames, shift * r, "stage"), r))
    m = MSMCR(stages, shift)
    m.check(books)
    return m


def write_compact(path, code: CompactCode) -> None:
    meta = {"fingerprint": code.codebook_fingerprint, "frame_shift_ms": code.frame_shift_ms}
    write_artifact(path, "compact", meta, {"tokens": code.tokens, "embedding": code.global_embedding})


def read_compact(path, model: AssociateModel | None = None) -> CompactCode:
    meta, arrays = read_artifact(path, "compact")
    if model is not None and meta["fingerprint"] != model.fingerprint():
        raise ArtifactMismatchError(f"{path}: compact code does not match the associate model")
    return CompactCode(arrays["tokens"], meta["fingerprint"], arrays["embedding"], meta["frame_shift_ms"])
