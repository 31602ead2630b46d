"""Objective evaluation: Frechet distance between embedding sets and token error rates."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, NumericError, UndefinedRateError

logger = logging.getLogger(__name__)

SPEAKER_SCALE = 10.0
CLAMP_WARN_FRACTION = 1e-6


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_stats(embeddings) -> GaussianStats:
    """Sample mean and unbiased (n - 1) covariance, symmetrized."""
    x = getattr(embeddings, "frames", embeddings)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 embeddings, got {x.shape[0] if x.ndim else 0}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite embedding")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean, cov, x.shape[0], degenerate=not np.any(cov))


def _psd_sqrt(a: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Symmetric PSD square root; returns it with the clamped (negative) eigenvalue mass."""
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition of {what} failed: {exc}") from exc
    clamped = float(-vals[vals < 0].sum())
    root = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    return root, clamped


def frechet_distance(a: GaussianStats, b: GaussianStats, scale: float = 1.0) -> float:
    """scale * (||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)).

    The trace of the inner square root equals the nuclear norm of
    S_b^1/2 S_a^1/2, which is taken from singular values rather than from
    square roots of (possibly noisy, near-zero) eigenvalues.
    """
    if a.dim != b.dim:
        raise InvalidInputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    root_a, clamp_a = _psd_sqrt(a.cov, "first covariance")
    root_b, clamp_b = _psd_sqrt(b.cov, "second covariance")
    trace = float(np.trace(a.cov) + np.trace(b.cov))
    clamped = clamp_a + clamp_b
    if clamped > CLAMP_WARN_FRACTION * max(trace, 1e-300):
        warnings.warn(f"clamped {clamped:.3g} of negative eigenvalue mass (trace {trace:.3g})", RuntimeWarning)
    try:
        tr_sqrt = float(np.sum(np.linalg.svd(root_b @ root_a, compute_uv=False)))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular value decomposition failed: {exc}") from exc
    value = float(diff @ diff) + trace - 2.0 * tr_sqrt
    if not np.isfinite(value):
        raise NumericError("Frechet distance is not finite")
    return scale * value


@dataclass(frozen=True)
class EditOps:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_distance(ref: Sequence, hyp: Sequence) -> EditOps:
    """Unit-cost Levenshtein alignment counts.

    The backtrace prefers substitution/match, then deletion, then insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = dp[i], dp[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ri == hyp[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if dp[i, j] == dp[i - 1, j - 1] + cost:
                s += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(s, d, ins)


def error_rate(ref: Sequence, hyp: Sequence) -> float:
    if len(ref) == 0:
        raise UndefinedRateError("error rate is undefined for an empty reference")
    return edit_distance(ref, hyp).total / len(ref)


def corpus_error_rate(pairs: Iterable[tuple[Sequence, Sequence]]) -> float:
    """Pooled rate: total edit operations over total reference tokens."""
    errors = tokens = 0
    for ref, hyp in pairs:
        errors += edit_distance(ref, hyp).total
        tokens += len(ref)
    if tokens == 0:
        raise UndefinedRateError("corpus has no reference tokens")
    return errors / tokens


def tokenize(line: str, unit: str = "char") -> list[str]:
    """Characters (CER, whitespace dropped) or whitespace-separated tokens (PER)."""
    if unit == "char":
        return [c for c in line.strip() if not c.isspace()]
    if unit in ("word", "phone", "token"):
        return line.split()
    raise InvalidInputError(f"unknown token unit {unit!r}")
