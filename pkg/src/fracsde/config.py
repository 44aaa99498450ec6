"""Experiment configuration: a versioned JSON schema plus a typed view."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import registry

__all__ = ["SCHEMA_VERSION", "SCHEMA", "KINDS", "ConfigError", "ExperimentConfig", "load_config"]

SCHEMA_VERSION = 1

KINDS = ("fbm", "fbm_covariance", "bracket", "ito_check", "mixed_ito", "doss", "doss_check", "bsde", "bdsde", "pde")

_hurst = {"type": "number", "exclusiveMinimum": 0.5, "exclusiveMaximum": 1.0}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fracsde experiment",
    "type": "object",
    "required": ["version", "kind", "seed"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "hurst": {"oneOf": [_hurst, {"type": "array", "items": _hurst, "minItems": 1}]},
        "horizon": _pos,
        "t": _pos,
        "x": {"type": "number"},
        "paths": _posint,
        "residual_paths": _posint,
        "eps_schedule": {"type": "array", "items": _pos, "minItems": 1},
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "b": {"type": "string"},
                "sigma": {"type": "string"},
                "f": {"type": "string"},
                "g": {"type": "string"},
                "phi": {"type": "string"},
                "field": {"type": "string"},
                "process": {"enum": ["fbm", "bm"]},
                "alpha0": {"type": "number"},
                "beta": {"type": "number"},
                "gamma": {"type": "number"},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_steps": _posint,
                "ratio": _posint,
                "subgrid": _posint,
                "method": {"enum": ["circulant", "cholesky"]},
                "x_min": {"type": "number"},
                "x_max": {"type": "number"},
                "n_x": _posint,
                "bsde_steps": _posint,
                "batch": _posint,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "degree": {"type": "integer", "minimum": 0},
                "cells": _posint,
                "picard": {"type": "integer", "minimum": 0},
                "flow_tol": _pos,
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"refine": _posint, "batch": _posint},
        },
        "statistic": {"enum": ["sup", "terminal", "terminal_minus_time"]},
        "include_bracket": {"type": "boolean"},
        "doss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "y": {"type": "number"},
                "z": {"type": "number"},
                "order": {"type": "integer", "minimum": 0, "maximum": 3},
                "range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "n": {"type": "integer", "minimum": 2},
                "bound_g": {"type": "array", "items": {"type": "string"}},
                "flow_g": {"type": "array", "items": {"type": "string"}},
            },
        },
        "probes": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
        "checks": {"type": "object"},
        "output": {"type": "string"},
    },
}


class ConfigError(ValueError):
    """Schema violation or unresolvable coefficient name."""


_COEFF_TABLE = {"b": "b", "sigma": "sigma", "f": "f", "g": "g", "phi": "phi"}


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Attributes mirror the JSON document; ``raw`` keeps the document itself
    for hashing and round trips.
    """

    kind: str
    seed: int
    name: str = ""
    hurst: float | list = 0.75
    horizon: float = 1.0
    t: float = 1.0
    x: float = 0.0
    paths: int = 100
    residual_paths: int = 200
    eps_schedule: list = field(default_factory=list)
    coefficients: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    statistic: str = "sup"
    include_bracket: bool = True
    doss: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    output: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"schema violation at {where}: {exc.message}") from None
        fields = {k: copy.deepcopy(v) for k, v in doc.items() if k not in ("version", "description")}
        cfg = cls(**fields, raw=copy.deepcopy(doc))
        cfg._resolve_names()
        cfg._check_schedule()
        return cfg

    def _resolve_names(self) -> None:
        try:
            for key, table in _COEFF_TABLE.items():
                if key in self.coefficients:
                    registry.lookup(table, self.coefficients[key])
            if "field" in self.coefficients:
                table = "field2" if self.kind == "mixed_ito" else "field1"
                registry.lookup(table, self.coefficients["field"])
            for name in self.doss.get("bound_g", []) + self.doss.get("flow_g", []):
                registry.lookup("g", name)
        except registry.UnknownCoefficient as exc:
            raise ConfigError(exc.args[0]) from None

    def _check_schedule(self) -> None:
        eps = self.eps_schedule
        if any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_schedule must be strictly decreasing")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """New validated config with top-level keys replaced (``None`` values ignored)."""
        doc = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is None:
                continue
            if isinstance(v, dict):
                doc.setdefault(k, {}).update(v)
            else:
                doc[k] = v
        return ExperimentConfig.from_dict(doc)

    @property
    def hurst_values(self) -> list[float]:
        return list(self.hurst) if isinstance(self.hurst, list) else [float(self.hurst)]

    def coefficient(self, key: str, default: str) -> str:
        return self.coefficients.get(key, default)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON document."""
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(doc)
