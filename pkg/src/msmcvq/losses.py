"""Training losses with analytic gradients.

Every ``*_loss`` takes ``return_grad``; when set it returns ``(value, grad)``
where ``grad`` is the derivative with respect to the generated / predicted
argument only. Stop-gradient arguments are treated as constants. Sums over
score and feature elements are reduced by their mean, and the L1
subgradient at zero is 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateLossWarning, InvalidInputError, NumericError


@dataclass(frozen=True)
class LossWeights:
    fm: float = 2.0
    mel: float = 45.0
    vq: float = 10.0
    ms: float = 1.0
    frame: float = 450.0
    rec: float = 1.0
    dur: float = 0.1

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InvalidInputError("; ".join(problems))

    def problems(self, prefix: str = "") -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                out.append(f"{prefix}{f.name}: must be a finite number >= 0, got {v!r}")
        return out


@dataclass
class DiscriminatorOutputs:
    """Per sub-discriminator score arrays and hidden-layer feature arrays."""

    scores: list[np.ndarray]
    features: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        self.scores = [np.asarray(s, dtype=np.float64) for s in self.scores]
        self.features = [[np.asarray(f, dtype=np.float64) for f in layers] for layers in self.features]
        if not self.scores:
            raise InvalidInputError("need at least one sub-discriminator")
        if any(s.size == 0 for s in self.scores):
            raise InvalidInputError("empty discriminator score array")
        if self.features and (len(self.features) != len(self.scores) or any(not l for l in self.features)):
            raise InvalidInputError("every sub-discriminator needs at least one feature layer")

    @property
    def num_discriminators(self) -> int:
        return len(self.scores)


def discriminator_loss(real: DiscriminatorOutputs, fake: DiscriminatorOutputs, return_grad: bool = False):
    """LSGAN discriminator loss; gradient is with respect to the fake scores."""
    k = real.num_discriminators
    if fake.num_discriminators != k:
        raise InvalidInputError(f"{k} real vs {fake.num_discriminators} fake sub-discriminators")
    total = 0.0
    grads = []
    for r, f in zip(real.scores, fake.scores):
        total += np.mean((r - 1.0) ** 2) + np.mean(f ** 2)
        grads.append(2.0 * f / (k * f.size))
    value = float(total / k)
    return (value, grads) if return_grad else value


def adversarial_loss(fake: DiscriminatorOutputs, return_grad: bool = False):
    k = fake.num_discriminators
    value = float(sum(np.mean((f - 1.0) ** 2) for f in fake.scores) / k)
    if not return_grad:
        return value
    return value, [2.0 * (f - 1.0) / (k * f.size) for f in fake.scores]


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = getattr(a, "frames", a)
    b = getattr(b, "frames", b)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mel_loss(x, x_hat, return_grad: bool = False):
    """Mean absolute difference between target and generated (log-)mel features."""
    x, x_hat = _pair(x, x_hat, "mel_loss")
    delta = x_hat - x
    value = float(np.mean(np.abs(delta))) if delta.size else 0.0
    if not return_grad:
        return value
    return value, np.sign(delta) / max(delta.size, 1)


def mel_loss_waveform(s, s_hat, params=None) -> float:
    """mel_loss with both waveforms first mapped through the log-mel front end."""
    from .dsp import log_mel_spectrogram

    return mel_loss(log_mel_spectrogram(s, params), log_mel_spectrogram(s_hat, params))


def feature_matching_loss(real: DiscriminatorOutputs, fake: DiscriminatorOutputs, return_grad: bool = False):
    k = real.num_discriminators
    if fake.num_discriminators != k or len(real.features) != k or len(fake.features) != k:
        raise InvalidInputError("feature matching needs hidden features for every sub-discriminator")
    total = 0.0
    grads = []
    for layers_r, layers_f in zip(real.features, fake.features):
        n = len(layers_r)
        if len(layers_f) != n:
            raise InvalidInputError(f"layer count mismatch: {n} vs {len(layers_f)}")
        g_layers = []
        for a, b in zip(layers_r, layers_f):
            if a.shape != b.shape:
                raise InvalidInputError(f"layer shape mismatch {a.shape} vs {b.shape}")
            delta = b - a
            total += np.mean(np.abs(delta)) / n
            g_layers.append(np.sign(delta) / (k * n * delta.size))
        grads.append(g_layers)
    value = float(total / k)
    return (value, grads) if return_grad else value


def frame_loss(x, x_hat, return_grad: bool = False):
    """Mean squared elementwise difference."""
    x, x_hat = _pair(x, x_hat, "frame_loss")
    delta = x_hat - x
    value = float(np.mean(delta * delta)) if delta.size else 0.0
    if not return_grad:
        return value
    return value, 2.0 * delta / max(delta.size, 1)


def stagewise_mse(pred: Sequence[np.ndarray], target: Sequence[np.ndarray], return_grad: bool = False):
    """(1/S) sum_i mean_t ||pred_i[t] - target_i[t]||^2, target constant.

    An empty list of stages gives 0 with a DegenerateLossWarning.
    """
    if len(pred) != len(target):
        raise InvalidInputError(f"{len(pred)} predicted stages vs {len(target)} targets")
    s = len(pred)
    if s == 0:
        warnings.warn("loss over zero stages is undefined; reporting 0", DegenerateLossWarning, stacklevel=3)
        return (0.0, []) if return_grad else 0.0
    total = 0.0
    grads = []
    for p, t in zip(pred, target):
        p, t = _pair(p, t, "stage loss")
        delta = p - t
        n = p.shape[0] if p.ndim else 1
        if n:
            total += np.sum(delta * delta) / n
        grads.append(2.0 * delta / (s * max(n, 1)))
    value = float(total / s)
    return (value, grads) if return_grad else value


def generator_total(parts: dict, w: LossWeights | None = None) -> float:
    """adv + fm*w.fm + mel*w.mel + vq*w.vq + ms*w.ms + frame*w.frame."""
    w = w or LossWeights()
    names = ("adv", "fm", "mel", "vq", "ms", "frame")
    missing = [n for n in names if n not in parts]
    if missing:
        raise InvalidInputError(f"missing loss parts: {missing}")
    for n in names:
        if not math.isfinite(parts[n]):
            raise InvalidInputError(f"loss part {n} is not finite: {parts[n]}")
    return float(
        parts["adv"]
        + w.fm * parts["fm"]
        + w.mel * parts["mel"]
        + w.vq * parts["vq"]
        + w.ms * parts["ms"]
        + w.frame * parts["frame"]
    )


def duration_loss(d, d_hat, return_grad: bool = False):
    d, d_hat = _pair(d, d_hat, "duration_loss")
    delta = d_hat - d
    value = float(np.mean(delta * delta)) if delta.size else 0.0
    if not return_grad:
        return value
    return value, 2.0 * delta / max(delta.size, 1)


def am_total(l_rec: float, l_dur: float, lambda_dur: float = 0.1) -> float:
    return float(l_rec + lambda_dur * l_dur)


@dataclass
class GradCheckReport:
    max_rel_error: float
    argmax: int
    h: float
    name: str = ""

    def line(self) -> str:
        return f"{self.name or 'loss'}\tmax_rel_error={self.max_rel_error:.3e}\targmax={self.argmax}\th={self.h:g}"


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point,
    h: float = 1e-4,
    skip: np.ndarray | None = None,
    name: str = "",
) -> GradCheckReport:
    """Compare f's analytic gradient with central differences at ``point``.

    Relative error per coordinate is |analytic - numeric| / max(1, |numeric|);
    coordinates flagged in ``skip`` (e.g. L1 kinks) are ignored.
    """
    x = np.array(point, dtype=np.float64).reshape(-1)
    value, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    if not math.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite loss or gradient at the check point")
    numeric = np.zeros_like(x)
    for i in range(x.size):
        if skip is not None and skip[i]:
            continue
        e = np.zeros_like(x)
        e[i] = h
        fp, fm = f(x + e)[0], f(x - e)[0]
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite loss evaluating coordinate {i}")
        numeric[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    if skip is not None:
        rel[np.asarray(skip, dtype=bool)] = 0.0
    i = int(np.argmax(rel)) if rel.size else 0
    return GradCheckReport(float(rel[i]) if rel.size else 0.0, i, h, name)


def _flat(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a).reshape(-1) for a in arrays]) if arrays else np.zeros(0)


def _unflat(x: np.ndarray, shapes) -> list[np.ndarray]:
    out, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(x[pos:pos + n].reshape(s))
        pos += n
    return out


def _random_disc(rng, k: int, with_features: bool = True) -> DiscriminatorOutputs:
    scores = [rng.normal(0.5, 0.5, size=rng.integers(3, 9)) for _ in range(k)]
    feats = []
    if with_features:
        feats = [[rng.normal(size=(2, rng.integers(2, 5))) for _ in range(rng.integers(1, 4))] for _ in range(k)]
    return DiscriminatorOutputs(scores, feats)


def gradcheck_cases(rng: np.random.Generator, margin: float = 1e-3):
    """One random (name, f, point, skip) case per loss, as flat-vector closures.

    L1 coordinates within ``margin`` of a kink are skipped; the margin must be
    at least the finite-difference step for the central difference to stay on
    one side of the kink.
    """
    k = int(rng.integers(1, 4))
    fake = _random_disc(rng, k)
    score_shapes = [s.shape for s in fake.scores]
    feat_shapes = [[f.shape for f in layers] for layers in fake.features]
    flat_shapes = [s for layers in feat_shapes for s in layers]
    real_like = DiscriminatorOutputs(
        [rng.normal(0.5, 0.5, size=s) for s in score_shapes],
        [[rng.normal(size=s) for s in layers] for layers in feat_shapes],
    )

    def disc(x):
        f = DiscriminatorOutputs(_unflat(x, score_shapes))
        v, g = discriminator_loss(DiscriminatorOutputs(real_like.scores), f, return_grad=True)
        return v, _flat(g)

    def adv(x):
        v, g = adversarial_loss(DiscriminatorOutputs(_unflat(x, score_shapes)), return_grad=True)
        return v, _flat(g)

    def regroup(x):
        arrs = _unflat(x, flat_shapes)
        out, pos = [], 0
        for layers in feat_shapes:
            out.append(arrs[pos:pos + len(layers)])
            pos += len(layers)
        return out

    def fm(x):
        f = DiscriminatorOutputs(fake.scores, regroup(x))
        v, g = feature_matching_loss(real_like, f, return_grad=True)
        return v, _flat([a for layers in g for a in layers])

    t, d = int(rng.integers(2, 7)), int(rng.integers(2, 6))
    target = rng.normal(size=(t, d))

    def mel(x):
        v, g = mel_loss(target, x.reshape(t, d), return_grad=True)
        return v, g.reshape(-1)

    def frame(x):
        v, g = frame_loss(target, x.reshape(t, d), return_grad=True)
        return v, g.reshape(-1)

    stage_shapes = [(int(rng.integers(1, 9)), d) for _ in range(int(rng.integers(1, 4)))]
    stage_targets = [rng.normal(size=s) for s in stage_shapes]

    def stage(x):
        v, g = stagewise_mse(_unflat(x, stage_shapes), stage_targets, return_grad=True)
        return v, _flat(g)

    n = int(rng.integers(2, 10))
    dur_target = rng.uniform(0, 10, size=n)

    def dur(x):
        return duration_loss(dur_target, x, return_grad=True)

    fm_point = _flat([f for layers in fake.features for f in layers])
    fm_real = _flat([f for layers in real_like.features for f in layers])
    mel_point = rng.normal(size=t * d)
    return [
        ("discriminator", disc, _flat(fake.scores), None),
        ("adversarial", adv, _flat(fake.scores), None),
        ("feature_matching", fm, fm_point, np.abs(fm_point - fm_real) < margin),
        ("mel", mel, mel_point, np.abs(mel_point - target.reshape(-1)) < margin),
        ("frame", frame, rng.normal(size=t * d), None),
        ("stage_mse", stage, _flat([rng.normal(size=s) for s in stage_shapes]), None),
        ("duration", dur, rng.uniform(0, 10, size=n), None),
    ]


def run_gradcheck_suite(points: int = 100, h: float = 1e-4, seed: int = 0) -> dict[str, GradCheckReport]:
    """Worst report per loss over ``points`` random points."""
    rng = np.random.default_rng(seed)
    worst: dict[str, GradCheckReport] = {}
    for _ in range(points):
        for name, f, x, skip in gradcheck_cases(rng, margin=max(h, 1e-6) * 10):
            rep = grad_check(f, x, h, skip, name)
            if name not in worst or rep.max_rel_error > worst[name].max_rel_error:
                worst[name] = rep
    return worst
