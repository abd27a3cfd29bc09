"""Run configuration: one JSON document, flags override file values."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .evaluators import (
    CachedEvaluator,
    EvaluationStore,
    ExternalEvaluator,
    FrequencySweep,
    SyntheticEvaluator,
    SyntheticModelParams,
)
from .geometry import GeometryConfig
from .optimizer import ObjectiveSpec, TrustRegionConfig


@dataclass(frozen=True)
class ScreeningConfig:
    N: int = 200
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"screening.N must be a positive integer, got {self.N!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"screening.seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class EvaluatorConfig:
    kind: str = "synthetic"
    synthetic: SyntheticModelParams = field(default_factory=SyntheticModelParams)
    command: str | None = None
    timeout: float | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "external"):
            raise ConfigError(f"evaluator.kind must be 'synthetic' or 'external', got {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise ConfigError("external evaluator needs a command")

    @classmethod
    def from_flag(cls, flag, base=None):
        """Parse ``synthetic`` or ``cmd:PATH``."""
        base = base or cls()
        if flag == "synthetic":
            return replace(base, kind="synthetic", command=None)
        if flag.startswith("cmd:") and len(flag) > 4:
            return replace(base, kind="external", command=flag[4:])
        raise ConfigError(f"--evaluator must be 'synthetic' or 'cmd:PATH', got {flag!r}")


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sweep: FrequencySweep = field(default_factory=FrequencySweep)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    tr: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    workers: int = 1
    output: str = "run"

    def __post_init__(self):
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        for lo, hi in (self.objective.band, self.objective.targets):
            if not self.sweep.contains(lo, hi):
                raise ConfigError(f"frequencies [{lo}, {hi}] GHz lie outside the sweep")

    def to_dict(self):
        return _plain(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            ev = dict(data.get("evaluator", {}))
            if "synthetic" in ev:
                ev["synthetic"] = _build(SyntheticModelParams, ev["synthetic"], "evaluator.synthetic")
            return cls(
                geometry=_build(GeometryConfig, data.get("geometry", {}), "geometry"),
                sweep=_build(FrequencySweep, data.get("sweep", {}), "sweep"),
                objective=_build(ObjectiveSpec, data.get("objective", {}), "objective"),
                tr=_build(TrustRegionConfig, data.get("tr", {}), "tr"),
                screening=_build(ScreeningConfig, data.get("screening", {}), "screening"),
                evaluator=_build(EvaluatorConfig, ev, "evaluator"),
                workers=data.get("workers", 1),
                output=data.get("output", "run"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path):
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_json(p.read_text())

    def with_overrides(self, seed=None, evaluator=None, objective=None, workers=None, output=None):
        cfg = self
        try:
            if seed is not None:
                cfg = replace(cfg, screening=replace(cfg.screening, seed=int(seed)))
            if evaluator is not None:
                cfg = replace(cfg, evaluator=EvaluatorConfig.from_flag(evaluator, cfg.evaluator))
            if objective is not None:
                cfg = replace(cfg, objective=replace(cfg.objective, kind=objective))
            if workers is not None:
                cfg = replace(cfg, workers=int(workers))
            if output is not None:
                cfg = replace(cfg, output=str(output))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def make_evaluator(self, store=None):
        """Inner evaluator wrapped in the cache backed by ``store``."""
        if self.evaluator.kind == "synthetic":
            inner = SyntheticEvaluator(self.evaluator.synthetic, self.geometry)
        else:
            inner = ExternalEvaluator(self.evaluator.command, self.geometry, timeout=self.evaluator.timeout)
        return CachedEvaluator(inner, store if store is not None else EvaluationStore())


def _build(cls, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
