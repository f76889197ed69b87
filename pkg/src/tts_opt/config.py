"""Experiment configuration: JSON schema, loading and problem construction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError
from .schedules import StepSchedule, regime_schedule

PROBLEM_TYPES = ("lqr", "mdp", "quadratic", "convex", "pl", "nonconvex")
TESTBED_REGIMES = {"quadratic": "strongly_convex", "convex": "convex", "pl": "pl",
                   "nonconvex": "nonconvex"}

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "schedule", "n_iters", "seeds"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": list(PROBLEM_TYPES)},
                "instance": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["A", "B", "Q", "R", "Psi"],
                    "properties": {
                        "A": _matrix, "B": _matrix, "Q": _matrix, "R": _matrix, "Psi": _matrix,
                        "sigma": {"type": "number", "minimum": 0},
                        "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "dims": {"type": "array", "items": {"type": "integer"}},
                    },
                },
                "critic_form": {"enum": ["bellman", "simplified"]},
                "init_K": _matrix,
                "mdp": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["P", "R", "features"],
                    "properties": {
                        "P": {"type": "array", "items": _matrix},
                        "R": _matrix,
                        "features": _matrix,
                    },
                },
                "theta0": {"type": "array", "items": {"type": "number"}},
                "testbed": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "d": {"type": "integer", "minimum": 1},
                        "r": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer"},
                        "coupling": {"enum": ["abs", "linear"]},
                        "L_c": {"type": "number"},
                        "lambda_f": {"type": "number", "exclusiveMinimum": 0},
                        "kappa_f": {"type": "number", "minimum": 1},
                        "lambda_G": {"type": "number", "exclusiveMinimum": 0},
                        "kappa_G": {"type": "number", "minimum": 1},
                        "noise_scale": {"type": "number", "minimum": 0},
                        "chain_c": {"type": "number"},
                        "chain_q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "huber_delta": {"type": "number", "exclusiveMinimum": 0},
                        "pl_amplitude": {"type": "number"},
                        "n_active": {"type": "integer", "minimum": 1},
                        "theta0": {"type": "number"},
                    },
                },
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "regime": {"enum": ["strongly_convex", "convex", "pl", "nonconvex"]},
                "kind": {"enum": ["power_law", "horizon_constant"]},
                "a": {"type": "number"},
                "b": {"type": "number"},
                "alpha0": {"type": "number", "exclusiveMinimum": 0},
                "beta0": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": ["integer", "null"]},
                "mix_C": {"type": "number", "exclusiveMinimum": 0},
                "mix_rho": {"type": "number"},
            },
        },
        "n_iters": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "eval_stride": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "safeguard": {"enum": ["abort", "log"]},
        "burn_in": {"type": ["integer", "null"], "minimum": 0},
    },
}


@dataclass
class ExperimentConfig:
    problem: dict
    schedule: StepSchedule
    n_iters: int
    seeds: list
    eval_stride: int = 1
    output_dir: str = "runs"
    safeguard: str = "abort"
    burn_in: Optional[int] = None
    raw: dict = field(default_factory=dict)

    @property
    def problem_type(self) -> str:
        return self.problem["type"]


def build_schedule(d: dict) -> StepSchedule:
    d = dict(d)
    regime = d.pop("regime", None)
    if regime is None:
        return StepSchedule.from_dict(d)
    allowed = {"alpha0", "beta0", "horizon", "mix_C", "mix_rho"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"fields {sorted(extra)} cannot be combined with 'regime'")
    return regime_schedule(regime, **d)


def validate(raw: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    problem = raw["problem"]
    ptype = problem["type"]
    needs = {"lqr": "instance", "mdp": "mdp"}
    if ptype in needs and needs[ptype] not in problem:
        raise ConfigError(f"problem type {ptype!r} needs a {needs[ptype]!r} payload")
    try:
        schedule = build_schedule(raw["schedule"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schedule: {exc}") from None
    except Exception as exc:  # MissingHorizon and friends
        raise ConfigError(f"schedule: {exc}") from None
    return ExperimentConfig(
        problem=problem, schedule=schedule, n_iters=int(raw["n_iters"]),
        seeds=[int(s) for s in raw["seeds"]], eval_stride=int(raw.get("eval_stride", 1)),
        output_dir=raw.get("output_dir", "runs"), safeguard=raw.get("safeguard", "abort"),
        burn_in=raw.get("burn_in"), raw=raw,
    )


def bundled_configs() -> list:
    root = resources.files("tts_opt.data")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(path) -> Path:
    """A file path, falling back to the bundled fixture of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("tts_opt.data").joinpath(p.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no such config: {path}")


def load_config(path) -> ExperimentConfig:
    try:
        text = resolve_path(path).read_text()
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if isinstance(raw, dict) and "config" in raw and "version" in raw:
        raw = raw["config"]     # a run manifest carries its config verbatim
    return validate(raw)
