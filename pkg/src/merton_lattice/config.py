"""JSON run configuration: strict schema, defaults and round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import jsonschema

from .model import FAMILIES, SAMPLERS

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "payoff", "engine"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["spot", "rate", "horizon", "vol"],
            "properties": {
                "spot": _VEC,
                "rate": _NUM,
                "horizon": _NUM,
                "vol": {"type": "array", "items": _VEC, "minItems": 1},
                "intensity": _NUM,
                "jumps": {
                    "oneOf": [
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["type", "values", "probs"],
                            "properties": {
                                "type": {"const": "discrete"},
                                "values": {"type": "array", "items": _VEC, "minItems": 1},
                                "probs": _VEC,
                            },
                        },
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["type", "name", "params"],
                            "properties": {
                                "type": {"const": "sampler"},
                                "name": {"enum": sorted(SAMPLERS)},
                                "params": {"type": "object"},
                                "seed": {"type": "integer"},
                            },
                        },
                    ]
                },
            },
        },
        "payoff": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "strike"],
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "strike": {"type": "number", "minimum": 0},
                "weights": _VEC,
            },
        },
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": ["integer", "null"], "minimum": 1},
                "n_list": {
                    "type": ["array", "null"],
                    "items": {"type": "integer", "minimum": 1},
                },
                "jump_mode": {"enum": ["native", "discretized", None]},
                "state_budget": {"type": "integer", "minimum": 1},
                "style": {"enum": ["american", "european"]},
                "reference": {"enum": ["closed_form", "mc", "richardson"]},
                "order": {"type": "number", "exclusiveMinimum": 0},
                "tail_samples": {"type": "integer", "minimum": 1},
            },
        },
        "mc": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 100},
                "steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "basis_degree": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": ["string", "null"]},
                "precision": {"type": "integer", "minimum": 1, "maximum": 17},
            },
        },
    },
}


class ConfigError(ValueError):
    """Schema or semantic problem in a run configuration."""


@dataclass
class EngineBlock:
    n: Optional[int] = None
    n_list: Optional[list] = None
    jump_mode: Optional[str] = None
    state_budget: int = 50_000_000
    style: str = "american"
    reference: str = "richardson"
    order: float = 1.0
    tail_samples: int = 100_000


@dataclass
class MCBlock:
    paths: int = 100_000
    steps: int = 50
    seed: int = 0
    basis_degree: int = 2


@dataclass
class OutputBlock:
    csv: Optional[str] = None
    precision: int = 12


@dataclass
class RunConfig:
    model: dict
    payoff: dict
    engine: EngineBlock = field(default_factory=EngineBlock)
    mc: Optional[MCBlock] = None
    output: OutputBlock = field(default_factory=OutputBlock)

    @classmethod
    def from_dict(cls, raw: Any) -> "RunConfig":
        validate(raw)
        payoff = dict(raw["payoff"])
        payoff.setdefault("weights", [1.0] * len(raw["model"]["spot"]))
        mc = raw.get("mc")
        return cls(
            model=json.loads(json.dumps(raw["model"])),
            payoff=payoff,
            engine=EngineBlock(**raw.get("engine", {})),
            mc=MCBlock(**mc) if mc is not None else None,
            output=OutputBlock(**raw.get("output", {})),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.mc is None:
            out["mc"] = None
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, n=None, seed=None, out=None, jump_mode=None) -> "RunConfig":
        cfg = replace(self, engine=replace(self.engine), output=replace(self.output))
        cfg.mc = replace(self.mc) if self.mc is not None else None
        if n is not None:
            cfg.engine.n = n
        if jump_mode is not None:
            cfg.engine.jump_mode = jump_mode
        if out is not None:
            cfg.output.csv = out
        if seed is not None:
            cfg.mc = replace(cfg.mc or MCBlock(), seed=seed)
        return cfg


def _where(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            parts.append(missing[0])
    elif err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            parts.append(extra[0])
    return ".".join(parts) or "<root>"


def validate(raw: Any) -> None:
    """Raise :class:`ConfigError` naming the offending field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors) or errors[0]
        raise ConfigError(f"{_where(err)}: {err.message}")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)
