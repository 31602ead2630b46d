"""Pipeline configuration: a nested YAML document validated as a whole."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dsp import StftParams
from .errors import ConfigError
from .losses import LossWeights
from .mhvq import DEFAULT_DECAY, DEFAULT_EPS
from .msmc import DEFAULT_RIDGE, StageConfig, StageGeometry


@dataclass(frozen=True)
class EmaConfig:
    decay: float = DEFAULT_DECAY
    eps: float = DEFAULT_EPS
    epochs: int = 20
    batch_size: int = 0  # 0 means the whole training set per update
    reseed_dead: bool = False


@dataclass(frozen=True)
class AssociateConfig:
    codewords: int = 64
    lambda_rec: float = 1.0


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftParams = field(default_factory=StftParams)
    stages: StageConfig = field(default_factory=StageConfig)
    ema: EmaConfig = field(default_factory=EmaConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    associate: AssociateConfig = field(default_factory=AssociateConfig)
    ridge_lambda: float = DEFAULT_RIDGE
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = {
            "rates": list(self.stages.rates),
            "geometries": [asdict(g) for g in self.stages.geometries],
        }
        return d


def default_config_dict() -> dict:
    return PipelineConfig().to_dict()


_SECTIONS = {"stft": StftParams, "ema": EmaConfig, "losses": LossWeights, "associate": AssociateConfig}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_keys(section: str, given: dict, allowed, problems: list[str]) -> None:
    for key in given:
        if key not in allowed:
            problems.append(f"{section}.{key}: unknown field")


def _field_types(cls) -> dict:
    return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


def validate_config(raw: dict) -> PipelineConfig:
    """Build a PipelineConfig from a (partial) nested dict.

    Missing keys take defaults. Every problem found is reported in one
    ConfigError whose message names each offending field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    problems: list[str] = []
    top_allowed = set(_SECTIONS) | {"stages", "ridge_lambda", "seed"}
    _check_keys("config", raw, top_allowed, problems)

    built = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            problems.append(f"{name}: must be a mapping")
            continue
        types = _field_types(cls)
        _check_keys(name, section, types, problems)
        kwargs = {}
        for key, value in section.items():
            if key not in types:
                continue
            want = types[key]
            if want is bool:
                ok = isinstance(value, bool)
            elif want is int:
                ok = _is_int(value)
            else:
                ok = _is_num(value)
            if not ok:
                problems.append(f"{name}.{key}: expected {want.__name__}, got {value!r}")
            else:
                kwargs[key] = value
        built[name] = kwargs

    ema = built.get("ema", {})
    if "decay" in ema and not 0.0 <= ema["decay"] < 1.0:
        problems.append(f"ema.decay: must lie in [0, 1), got {ema['decay']}")
    if "eps" in ema and not ema["eps"] > 0:
        problems.append(f"ema.eps: must be positive, got {ema['eps']}")
    if "epochs" in ema and ema["epochs"] < 0:
        problems.append(f"ema.epochs: must be >= 0, got {ema['epochs']}")
    if "batch_size" in ema and ema["batch_size"] < 0:
        problems.append(f"ema.batch_size: must be >= 0, got {ema['batch_size']}")
    assoc = built.get("associate", {})
    if "codewords" in assoc and assoc["codewords"] < 1:
        problems.append(f"associate.codewords: must be >= 1, got {assoc['codewords']}")
    if "lambda_rec" in assoc and assoc["lambda_rec"] < 0:
        problems.append(f"associate.lambda_rec: must be >= 0, got {assoc['lambda_rec']}")

    stft = StftParams.__new__(StftParams)
    merged = {**asdict(StftParams()), **built.get("stft", {})}
    for k, v in merged.items():
        object.__setattr__(stft, k, v)
    if not any(p.startswith("stft.") for p in problems):
        problems.extend(stft.problems("stft."))
    weights = LossWeights.__new__(LossWeights)
    for k, v in {**asdict(LossWeights()), **built.get("losses", {})}.items():
        object.__setattr__(weights, k, v)
    if not any(p.startswith("losses.") for p in problems):
        problems.extend(weights.problems("losses."))

    stages = raw.get("stages", {})
    stage_cfg = None
    if not isinstance(stages, dict):
        problems.append("stages: must be a mapping")
    else:
        _check_keys("stages", stages, {"rates", "geometries"}, problems)
        defaults = StageConfig()
        rates = stages.get("rates", list(defaults.rates))
        geoms = stages.get("geometries", [asdict(g) for g in defaults.geometries])
        local: list[str] = []
        if not isinstance(rates, list) or not all(_is_int(r) for r in rates):
            local.append(f"stages.rates: must be a list of integers, got {rates!r}")
        if not isinstance(geoms, list) or not all(isinstance(g, dict) for g in geoms):
            local.append("stages.geometries: must be a list of mappings")
        else:
            gfields = {f.name for f in fields(StageGeometry)}
            for i, g in enumerate(geoms):
                _check_keys(f"stages.geometries[{i}]", g, gfields, local)
                for k in gfields:
                    if k in g and not _is_int(g[k]):
                        local.append(f"stages.geometries[{i}].{k}: expected int, got {g[k]!r}")
        if not local:
            probe = StageConfig.__new__(StageConfig)
            object.__setattr__(probe, "rates", tuple(rates))
            object.__setattr__(probe, "geometries", tuple(StageGeometry(**{**asdict(StageGeometry()), **g}) for g in geoms))
            local.extend(probe.problems("stages."))
            if not local:
                dims = {g.total_dim for g in probe.geometries}
                if len(dims) > 1:
                    local.append(f"stages.geometries: every stage must quantize the same dimension, got {sorted(dims)}")
            if not local:
                stage_cfg = probe
        problems.extend(local)

    ridge = raw.get("ridge_lambda", DEFAULT_RIDGE)
    if not _is_num(ridge) or ridge < 0:
        problems.append(f"ridge_lambda: must be a finite number >= 0, got {ridge!r}")
    seed = raw.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        problems.append(f"seed: must be a nonnegative integer, got {seed!r}")

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return PipelineConfig(
        stft=StftParams(**merged),
        stages=stage_cfg,
        ema=EmaConfig(**built.get("ema", {})),
        losses=LossWeights(**{**asdict(LossWeights()), **built.get("losses", {})}),
        associate=AssociateConfig(**built.get("associate", {})),
        ridge_lambda=float(ridge),
        seed=seed,
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return validate_config(raw)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def with_overrides(raw: dict, **top) -> dict:
    out = copy.deepcopy(raw)
    out.update({k: v for k, v in top.items() if v is not None})
    return out
