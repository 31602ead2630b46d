"""Multi-head (product) vector quantization with EMA codebook learning.

A codebook with H heads splits each D-dim vector into H chunks of d = D / H
values and quantizes every chunk against its own K codewords.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureSequence
from .errors import ConfigError, InsufficientDataError, InvalidIndexError, InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_DECAY = 0.99
DEFAULT_EPS = 1e-5
DEAD_USAGE = 1e-4

# rows per distance block
_CHUNK = 4096


@dataclass
class MultiHeadCodebook:
    codewords: np.ndarray  # (H, K, d)

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.float64)
        if cw.ndim == 2:
            cw = cw[None]
        if cw.ndim != 3 or min(cw.shape) < 1:
            raise ConfigError(f"codewords must have shape (H, K, d) with all sizes >= 1, got {cw.shape}")
        if not np.all(np.isfinite(cw)):
            raise InvalidInputError("codebook contains non-finite codewords")
        self.codewords = cw

    @property
    def heads(self) -> int:
        return self.codewords.shape[0]

    @property
    def num_codewords(self) -> int:
        return self.codewords.shape[1]

    @property
    def head_dim(self) -> int:
        return self.codewords.shape[2]

    @property
    def total_dim(self) -> int:
        return self.heads * self.head_dim

    def copy(self) -> "MultiHeadCodebook":
        return MultiHeadCodebook(self.codewords.copy())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.codewords.shape, dtype="<u8").tobytes())
        h.update(np.ascontiguousarray(self.codewords, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class EmaState:
    cluster_count: np.ndarray  # (H, K)
    cluster_sum: np.ndarray  # (H, K, d)
    decay: float = DEFAULT_DECAY
    smoothing_eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError(f"decay must lie in [0, 1), got {self.decay}")
        if not self.smoothing_eps > 0:
            raise ConfigError(f"smoothing_eps must be positive, got {self.smoothing_eps}")
        self.cluster_count = np.asarray(self.cluster_count, dtype=np.float64)
        self.cluster_sum = np.asarray(self.cluster_sum, dtype=np.float64)
        if np.any(self.cluster_count < 0):
            raise InvalidInputError("cluster counts must be nonnegative")
        if self.cluster_sum.shape[:2] != self.cluster_count.shape:
            raise InvalidInputError("cluster_sum and cluster_count shapes disagree")

    @classmethod
    def for_codebook(cls, cb: MultiHeadCodebook, decay: float = DEFAULT_DECAY, eps: float = DEFAULT_EPS):
        # unit counts with sums equal to the codewords: sum/count reproduces the book
        count = np.ones((cb.heads, cb.num_codewords))
        return cls(count, cb.codewords.copy(), decay, eps)

    def copy(self) -> "EmaState":
        return EmaState(self.cluster_count.copy(), self.cluster_sum.copy(), self.decay, self.smoothing_eps)


@dataclass
class QuantizationResult:
    indices: np.ndarray  # (H,)
    quantized: np.ndarray  # (D,)
    head_sq_errors: np.ndarray  # (H,)


def _as_matrix(data, dim: int | None = None) -> np.ndarray:
    if isinstance(data, FeatureSequence):
        x = data.frames
    else:
        x = np.asarray(data, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
    if x.ndim != 2:
        raise InvalidInputError(f"expected a matrix of vectors, got shape {x.shape}")
    if dim is not None and x.shape[0] and x.shape[1] != dim:
        raise InvalidInputError(f"vector dimension {x.shape[1]} does not match codebook dimension {dim}")
    return x


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # fewer distinct points than k; duplicates are unavoidable
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def init_codebook(data, H: int, K: int, seed: int = 0) -> MultiHeadCodebook:
    """k-means++ seeding on each head's chunk of ``data``; deterministic in ``seed``."""
    x = _as_matrix(data)
    if H < 1 or K < 1:
        raise ConfigError(f"H and K must be >= 1, got H={H}, K={K}")
    if x.shape[1] % H:
        raise ConfigError(f"dimension {x.shape[1]} is not divisible by {H} heads")
    if x.shape[0] < K:
        raise InsufficientDataError(f"need at least K={K} vectors to seed a codebook, got {x.shape[0]}")
    d = x.shape[1] // H
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(H)]
    heads = [_kmeans_pp(x[:, h * d:(h + 1) * d], K, rngs[h]) for h in range(H)]
    return MultiHeadCodebook(np.stack(heads))


def _exact_distances(chunk: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    diff = chunk[:, None, :] - codewords[None, :, :]
    return np.sum(diff * diff, axis=2)


def _head_argmin(chunk: np.ndarray, codewords: np.ndarray, c_norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest codeword per row, lowest index on ties.

    Distances are screened with the matmul expansion; rows whose runner-up
    lies within rounding error of the best are re-scored exactly.
    """
    x_norm = np.sum(chunk * chunk, axis=1)
    approx = x_norm[:, None] - 2.0 * (chunk @ codewords.T) + c_norm[None, :]
    best = np.argmin(approx, axis=1)
    rows = np.arange(chunk.shape[0])
    slack = 1e-9 * (x_norm + c_norm.max()) + 1e-300
    close = np.count_nonzero(approx <= approx[rows, best][:, None] + slack[:, None], axis=1) > 1
    if np.any(close):
        best[close] = np.argmin(_exact_distances(chunk[close], codewords), axis=1)
    picked = chunk - codewords[best]
    return best, np.sum(picked * picked, axis=1)


def assign(x: np.ndarray, cb: MultiHeadCodebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-codeword indices (N, H) and squared errors (N, H); ties go to the lowest index."""
    x = _as_matrix(x, cb.total_dim)
    n, d = x.shape[0], cb.head_dim
    idx = np.zeros((n, cb.heads), dtype=np.int64)
    err = np.zeros((n, cb.heads))
    c_norm = np.sum(cb.codewords * cb.codewords, axis=2)
    for start in range(0, n, _CHUNK):
        block = x[start:start + _CHUNK]
        for h in range(cb.heads):
            best, e = _head_argmin(block[:, h * d:(h + 1) * d], cb.codewords[h], c_norm[h])
            idx[start:start + _CHUNK, h] = best
            err[start:start + _CHUNK, h] = e
    return idx, err


def quantize(x, cb: MultiHeadCodebook) -> QuantizationResult:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != cb.total_dim:
        raise InvalidInputError(f"expected a vector of dimension {cb.total_dim}, got shape {x.shape}")
    idx, err = assign(x[None, :], cb)
    return QuantizationResult(idx[0], dequantize(idx[0], cb), err[0])


def dequantize(indices, cb: MultiHeadCodebook) -> np.ndarray:
    """Concatenate the selected codewords. ``indices`` may be (H,) or (T, H)."""
    idx = np.asarray(indices)
    if idx.shape[-1:] != (cb.heads,) or not np.issubdtype(idx.dtype, np.integer):
        raise InvalidIndexError(f"expected integer indices with trailing size {cb.heads}, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= cb.num_codewords):
        raise InvalidIndexError(f"codeword index out of range [0, {cb.num_codewords})")
    picked = cb.codewords[np.arange(cb.heads), idx]  # (..., H, d)
    return picked.reshape(idx.shape[:-1] + (cb.total_dim,))


def quantize_sequence(seq: FeatureSequence, cb: MultiHeadCodebook) -> tuple[np.ndarray, FeatureSequence]:
    """Quantize every frame; returns the (T, H) token matrix and the quantized sequence."""
    if seq.num_frames == 0:
        return np.zeros((0, cb.heads), dtype=np.int64), seq.with_frames(np.zeros((0, cb.total_dim)))
    if seq.dim != cb.total_dim:
        raise InvalidInputError(f"sequence dimension {seq.dim} does not match codebook dimension {cb.total_dim}")
    tokens, _ = assign(seq.frames, cb)
    return tokens, seq.with_frames(dequantize(tokens, cb))


def _cluster_sums(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Per-cluster sums of the rows of ``x``, each accumulated in input order."""
    out = np.zeros((k, x.shape[1]))
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1]])
    out[sorted_labels[starts]] = np.add.reduceat(x[order], starts, axis=0)
    return out


def _smoothed_counts(count: np.ndarray, eps: float) -> np.ndarray:
    n = count.sum()
    k = count.shape[0]
    return (count + eps) / (n + k * eps) * n


def ema_update(
    cb: MultiHeadCodebook, st: EmaState, batch, *, assignments: np.ndarray | None = None
) -> tuple[MultiHeadCodebook, EmaState]:
    """One exponential-moving-average codebook step; inputs are not modified.

    Assignments are computed with the pre-update codebook unless supplied.
    """
    x = _as_matrix(batch, cb.total_dim)
    if x.shape[0] == 0:
        return cb, st
    if st.cluster_sum.shape != cb.codewords.shape:
        raise InvalidInputError("EMA state shape does not match the codebook")
    idx = assign(x, cb)[0] if assignments is None else assignments
    g, eps = st.decay, st.smoothing_eps
    K, d = cb.num_codewords, cb.head_dim
    count = st.cluster_count.copy()
    total = st.cluster_sum.copy()
    new_cw = np.empty_like(cb.codewords)
    for h in range(cb.heads):
        chunk = x[:, h * d:(h + 1) * d]
        n_i = np.bincount(idx[:, h], minlength=K).astype(np.float64)
        s_i = _cluster_sums(chunk, idx[:, h], K)
        count[h] = g * count[h] + (1.0 - g) * n_i
        total[h] = g * total[h] + (1.0 - g) * s_i
        new_cw[h] = total[h] / _smoothed_counts(count[h], eps)[:, None]
    return MultiHeadCodebook(new_cw), EmaState(count, total, g, eps)


def usage_entropy(tokens: np.ndarray, K: int) -> np.ndarray:
    """Natural-log entropy of each head's empirical token distribution."""
    tokens = np.asarray(tokens)
    out = np.zeros(tokens.shape[1] if tokens.ndim == 2 else 0)
    for h in range(out.shape[0]):
        p = np.bincount(tokens[:, h], minlength=K) / max(tokens.shape[0], 1)
        p = p[p > 0]
        out[h] = float(-np.sum(p * np.log(p))) if p.size else 0.0
    return out


@dataclass
class TrainingReport:
    initial_error: float
    epoch_errors: list[float] = field(default_factory=list)
    epoch_entropy: list[list[float]] = field(default_factory=list)
    selected_epoch: int = 0
    reseeded: int = 0

    @property
    def final_error(self) -> float:
        return min([self.initial_error] + self.epoch_errors)

    def to_dict(self) -> dict:
        return {
            "initial_error": self.initial_error,
            "epoch_errors": list(self.epoch_errors),
            "epoch_entropy": [list(e) for e in self.epoch_entropy],
            "final_error": self.final_error,
            "selected_epoch": self.selected_epoch,
            "reseeded": self.reseeded,
        }


def mean_quantization_error(x: np.ndarray, cb: MultiHeadCodebook) -> float:
    """Mean over vectors of the full squared quantization error."""
    _, err = assign(x, cb)
    return float(err.sum(axis=1).mean()) if err.shape[0] else 0.0


def train_codebook(
    data,
    H: int,
    K: int,
    epochs: int = 20,
    decay: float = DEFAULT_DECAY,
    seed: int = 0,
    *,
    eps: float = DEFAULT_EPS,
    batch_size: int | None = None,
    reseed_dead: bool = False,
) -> tuple[MultiHeadCodebook, TrainingReport]:
    """k-means++ init followed by ``epochs`` passes of EMA updates over ``data``.

    Batches are taken in input order (the whole set when ``batch_size`` is
    None). The returned codebook is the epoch snapshot with the lowest mean
    quantization error, so the final error never exceeds the initial one.
    """
    x = _as_matrix(data)
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    cb = init_codebook(x, H, K, seed)
    st = EmaState.for_codebook(cb, decay, eps)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(H + 1)[H])
    tokens, err = assign(x, cb)
    report = TrainingReport(initial_error=float(err.sum(axis=1).mean()))
    best, best_err = cb, report.initial_error
    step = x.shape[0] if not batch_size else int(batch_size)
    for epoch in range(1, epochs + 1):
        for start in range(0, x.shape[0], step):
            batch = x[start:start + step]
            # a single full batch can reuse the assignments of the last evaluation
            reuse = tokens if step >= x.shape[0] else None
            cb, st = ema_update(cb, st, batch, assignments=reuse)
            if reseed_dead:
                cb, st, n = _reseed_dead(cb, st, batch, rng)
                report.reseeded += n
        tokens, err = assign(x, cb)
        e = float(err.sum(axis=1).mean())
        report.epoch_errors.append(e)
        report.epoch_entropy.append(usage_entropy(tokens, K).tolist())
        logger.debug("epoch %d: mean quantization error %.6g", epoch, e)
        if e < best_err:
            best, best_err, report.selected_epoch = cb, e, epoch
    return best, report


def _reseed_dead(cb: MultiHeadCodebook, st: EmaState, batch: np.ndarray, rng: np.random.Generator):
    cw, count, total = cb.codewords.copy(), st.cluster_count.copy(), st.cluster_sum.copy()
    d = cb.head_dim
    n = 0
    for h in range(cb.heads):
        usage = count[h] / max(count[h].sum(), 1e-300)
        dead = np.flatnonzero(usage < DEAD_USAGE)
        if dead.size == 0:
            continue
        picks = rng.integers(batch.shape[0], size=dead.size)
        cw[h, dead] = batch[picks, h * d:(h + 1) * d]
        count[h, dead] = 1.0
        total[h, dead] = cw[h, dead]
        n += dead.size
    return MultiHeadCodebook(cw), EmaState(count, total, st.decay, st.smoothing_eps), n


@dataclass
class HeadStats:
    histogram: np.ndarray
    perplexity: float
    zero_support: bool = False


def codebook_stats(tokens, K: int) -> list[HeadStats]:
    """Per-head usage histogram and perplexity exp(entropy), which lies in [1, K]."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[:, None]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= K):
        raise InvalidIndexError(f"token out of range [0, {K})")
    if tokens.shape[0] == 0:
        return [HeadStats(np.zeros(K, dtype=np.int64), 1.0, True) for _ in range(tokens.shape[1])]
    ent = usage_entropy(tokens, K)
    return [
        HeadStats(np.bincount(tokens[:, h], minlength=K), float(np.exp(ent[h])))
        for h in range(tokens.shape[1])
    ]
