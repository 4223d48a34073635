"""Run configuration: one strict JSON document drives every command.

Unknown keys are rejected at every nesting level so that a misspelled
threshold cannot silently fall back to its default.  Sections that carry
their own ``rng_seed`` (``synth``, ``provider.noise``, ``estimator``) inherit
the top-level ``seed`` unless they set one explicitly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .correspondence import PROVIDER_NAMES, NoiseConfig, make_provider
from .domgraph import DEFAULT_THRESHOLD, ERROR_MODES
from .errors import ParseError, ValidationError
from .geometry import EstimatorConfig
from .model import Bbox3
from .model_io import dumps_canonical
from .synth import SynthConfig


@dataclass(frozen=True)
class ProviderConfig:
    name: str = "descriptor-nn"
    ratio_threshold: float = 0.8
    noise: NoiseConfig = NoiseConfig()

    def __post_init__(self) -> None:
        if self.name not in PROVIDER_NAMES:
            raise ValidationError(f"provider.name: must be one of {', '.join(PROVIDER_NAMES)} (got {self.name!r})")
        if not 0 < self.ratio_threshold <= 1:
            raise ValidationError("provider.ratio_threshold: must lie in (0, 1]")

    def build(self):
        return make_provider(self.name, self.noise, self.ratio_threshold)


@dataclass(frozen=True)
class RunConfig:
    threshold: float = DEFAULT_THRESHOLD
    domset_iterations: int = 1000
    seed: int = 0
    provider: ProviderConfig = ProviderConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    unit_scale: float = 1.0
    error_mode: str = "bbox_corners"
    random_baselines: int = 20
    bbox: Bbox3 | None = None
    recompute_bbox: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self) -> None:
        problems = []
        if not self.threshold >= 0:
            problems.append("threshold: must be >= 0")
        if self.domset_iterations < 1:
            problems.append("domset_iterations: must be >= 1")
        if not self.unit_scale > 0:
            problems.append("unit_scale: must be > 0")
        if self.error_mode not in ERROR_MODES:
            problems.append(f"error_mode: must be one of {', '.join(ERROR_MODES)}")
        if self.random_baselines < 0:
            problems.append("random_baselines: must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            problems.append("seed: must be a 64-bit unsigned integer")
        if problems:
            raise ValidationError("; ".join(problems))

    def graph_cache_key(self) -> str:
        """Digest of every setting that changes the localizability graph."""
        doc = {
            "provider": asdict(self.provider),
            "estimator": asdict(self.estimator),
            "threshold": self.threshold,
            "error_mode": self.error_mode,
        }
        return hashlib.sha256(dumps_canonical(doc).encode("utf-8")).hexdigest()


_SCALAR_TYPES = {int: (int,), float: (int, float), str: (str,), bool: (bool,)}


def _check_keys(doc: Any, allowed: set[str], where: str) -> None:
    if not isinstance(doc, Mapping):
        raise ValidationError(f"{where or 'config'}: must be a JSON object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ValidationError(
            "; ".join(f"{prefix}{k}: unknown key (allowed: {', '.join(sorted(allowed))})" for k in unknown)
        )


def _typed(value: Any, kind: type, name: str) -> Any:
    ok = _SCALAR_TYPES[kind]
    # bool is an int subclass; never accept it for numeric fields
    if isinstance(value, bool) and kind is not bool or not isinstance(value, ok):
        raise ValidationError(f"{name}: expected {kind.__name__}, got {type(value).__name__}")
    return kind(value)


def _scalar_section(cls, doc: Mapping[str, Any], where: str, seed: int):
    """Build a flat dataclass from ``doc``; a missing ``rng_seed`` inherits ``seed``."""
    names = {f.name: f for f in fields(cls)}
    _check_keys(doc, set(names), where)
    kwargs = {}
    for key, value in doc.items():
        f = names[key]
        hint = str(f.type)
        name = f"{where}.{key}"
        if value is None and "None" in hint:
            kwargs[key] = None
        elif hint.startswith("int"):
            kwargs[key] = _typed(value, int, name)
        elif hint.startswith("float"):
            kwargs[key] = _typed(value, float, name)
        elif hint.startswith("bool"):
            kwargs[key] = _typed(value, bool, name)
        else:
            kwargs[key] = _typed(value, str, name)
    if "rng_seed" in names and "rng_seed" not in kwargs:
        kwargs["rng_seed"] = seed
    return cls(**kwargs)


def config_from_dict(doc: Mapping[str, Any], seed_override: int | None = None) -> RunConfig:
    top = {f.name for f in fields(RunConfig)}
    _check_keys(doc, top, "")
    seed = seed_override if seed_override is not None else _typed(doc.get("seed", 0), int, "seed")
    kwargs: dict[str, Any] = {"seed": seed}
    for key in ("threshold", "unit_scale"):
        if key in doc:
            kwargs[key] = _typed(doc[key], float, key)
    for key in ("domset_iterations", "random_baselines"):
        if key in doc:
            kwargs[key] = _typed(doc[key], int, key)
    if "error_mode" in doc:
        kwargs["error_mode"] = _typed(doc["error_mode"], str, "error_mode")
    if "recompute_bbox" in doc:
        kwargs["recompute_bbox"] = _typed(doc["recompute_bbox"], bool, "recompute_bbox")
    if doc.get("bbox") is not None:
        box = doc["bbox"]
        _check_keys(box, {"min", "max"}, "bbox")
        try:
            kwargs["bbox"] = Bbox3(box["min"], box["max"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bbox: {exc}") from None

    prov = doc.get("provider", {})
    _check_keys(prov, {"name", "ratio_threshold", "noise"}, "provider")
    noise = _scalar_section(NoiseConfig, prov.get("noise", {}), "provider.noise", seed)
    kwargs["provider"] = ProviderConfig(
        _typed(prov.get("name", ProviderConfig.name), str, "provider.name"),
        _typed(prov.get("ratio_threshold", ProviderConfig.ratio_threshold), float, "provider.ratio_threshold"),
        noise,
    )
    kwargs["estimator"] = _scalar_section(EstimatorConfig, doc.get("estimator", {}), "estimator", seed)
    kwargs["synth"] = _scalar_section(SynthConfig, doc.get("synth", {}), "synth", seed)
    return RunConfig(**kwargs)


def load_config(path: str | Path | None, seed_override: int | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, seed_override)
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from None
    return config_from_dict(doc, seed_override)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    doc = asdict(cfg)
    doc["bbox"] = None if cfg.bbox is None else {"min": cfg.bbox.min_corner.tolist(), "max": cfg.bbox.max_corner.tolist()}
    return doc
