"""Run configuration: a TOML document flattened to dotted keys and checked against a schema."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import tomli

from .levy import LevyModel
from .spde import heat_l2_condition, picard_condition

COMMANDS = ("simulate-field", "solve-poisson", "solve-heat", "solve-quasilinear", "validate")
NONLINEARITIES = ("zero", "constant", "sin", "tanh", "linear")
INITIAL = ("zero", "gaussian", "sine")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists one message per offending key."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _real(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise TypeError("expected a finite number")
    return float(v)


def _int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return int(v)


def _bool(v) -> bool:
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v) -> str:
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _reals(v) -> tuple[float, ...]:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise TypeError("expected a non-empty list of numbers")
    return tuple(_real(x) for x in v)


def _ints(v) -> tuple[int, ...]:
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise TypeError("expected a non-empty list of integers")
    return tuple(_int(x) for x in v)


def _points(v) -> tuple[tuple[float, ...], ...]:
    if not isinstance(v, list) or not v:
        raise TypeError("expected a non-empty list of points")
    return tuple(_reals(p) for p in v)


def _strs(v) -> tuple[str, ...]:
    if not isinstance(v, list):
        raise TypeError("expected a list of strings")
    return tuple(_str(x) for x in v)


# key -> (parser, default); REQUIRED marks keys without a default
REQUIRED = object()
SCHEMA: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "command": (_str, REQUIRED),
    "seed": (_int, None),
    "replicas": (_int, 1),
    "out": (_str, "frlevy-out"),
    "model.kind": (_str, "finite"),
    "model.rate": (_real, 2.0),
    "model.marks": (_reals, (1.0,)),
    "model.probs": (_reals, None),
    "model.epsilon": (_real, 0.0),
    "model.alpha": (_real, 1.2),
    "model.lambda_plus": (_real, 1.0),
    "model.lambda_minus": (_real, 1.0),
    "model.scale": (_real, 1.0),
    "fractional.beta": (_reals, REQUIRED),
    "fractional.beta0": (_real, 0.3),
    "domain.lower": (_reals, (0.0,)),
    "domain.upper": (_reals, (1.0,)),
    "domain.cells": (_ints, (64,)),
    "domain.t_end": (_real, 1.0),
    "domain.time_steps": (_int, 100),
    "domain.past": (_real, 10.0),
    "domain.scheme": (_str, "exponential"),
    "field.points": (_points, ((1.0,),)),
    "field.past": (_real, 50.0),
    "field.tail_tol": (_real, 0.0),
    "forcing.noise": (_bool, True),
    "forcing.constant": (_real, 0.0),
    "quasilinear.nonlinearity": (_str, "sin"),
    "quasilinear.lipschitz": (_real, 1.0),
    "quasilinear.growth": (_real, 1.0),
    "quasilinear.constant": (_real, 0.0),
    "quasilinear.initial": (_str, "gaussian"),
    "quasilinear.tol": (_real, 1e-8),
    "quasilinear.max_iter": (_int, 50),
    "quasilinear.strict": (_bool, False),
    "output.time_stride": (_int, 1),
    "validate.checks": (_strs, None),
}


def flatten(doc: dict, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    """A validated run description with every default filled in."""

    command: str
    values: dict
    text_sha256: str
    warnings: tuple[str, ...] = ()
    conditions: dict = field(default_factory=dict)
    explicit: frozenset = frozenset()

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def dim(self) -> int:
        return len(self.values["fractional.beta"])

    def model(self) -> LevyModel:
        v = self.values
        if v["model.kind"] == "finite":
            return LevyModel.finite_activity(v["model.rate"], v["model.marks"], v["model.probs"], v["model.epsilon"])
        return LevyModel.tempered_stable(v["model.alpha"], v["model.lambda_plus"], v["model.lambda_minus"],
                                         v["model.scale"], v["model.epsilon"])


def _check_ranges(v: dict, problems: list[str]) -> None:
    if v["command"] not in COMMANDS:
        problems.append(f"command: unknown command {v['command']!r} (expected one of {', '.join(COMMANDS)})")
    beta = v.get("fractional.beta") or ()
    for k, b in enumerate(beta):
        if not 0.0 < b < 0.5:
            problems.append(f"beta[{k + 1}] out of (0, 0.5): {b:g}")
    b0 = v["fractional.beta0"]
    if v["command"] in ("solve-heat", "solve-quasilinear") and not 0.0 < b0 < 0.5:
        problems.append(f"beta0 out of (0, 0.5): {b0:g}")
    d = len(beta)
    if v["command"] in ("solve-poisson", "solve-heat", "solve-quasilinear"):
        for key in ("domain.lower", "domain.upper", "domain.cells"):
            if len(v[key]) not in (1, d):
                problems.append(f"{key}: needs 1 or {d} entries, got {len(v[key])}")
        if any(n < 8 for n in v["domain.cells"]):
            problems.append("domain.cells: resolution must be >= 8 cells per axis")
        if v["domain.t_end"] < 0:
            problems.append("domain.t_end: must be >= 0")
        if v["domain.time_steps"] < 1:
            problems.append("domain.time_steps: must be >= 1")
        if v["domain.past"] < 0:
            problems.append("domain.past: must be >= 0")
        if v["domain.scheme"] not in ("exponential", "explicit"):
            problems.append(f"domain.scheme: unknown scheme {v['domain.scheme']!r}")
    if v["command"] == "simulate-field":
        for i, p in enumerate(v["field.points"]):
            if len(p) != d:
                problems.append(f"field.points[{i + 1}]: has {len(p)} coordinates, beta has {d}")
        if v["field.past"] <= 0:
            problems.append("field.past: must be > 0")
        if v["field.tail_tol"] < 0:
            problems.append("field.tail_tol: must be >= 0 (0 disables the check)")
    if v["replicas"] < 1:
        problems.append("replicas: must be >= 1")
    if v["seed"] is not None and v["seed"] < 0:
        problems.append("seed: must be >= 0")
    if v["model.kind"] not in ("finite", "tempered_stable"):
        problems.append(f"model.kind: unknown model {v['model.kind']!r}")
    if v["quasilinear.nonlinearity"] not in NONLINEARITIES:
        problems.append(f"quasilinear.nonlinearity: expected one of {', '.join(NONLINEARITIES)}")
    if v["quasilinear.initial"] not in INITIAL:
        problems.append(f"quasilinear.initial: expected one of {', '.join(INITIAL)}")
    if v["quasilinear.tol"] <= 0:
        problems.append("quasilinear.tol: must be > 0")
    if v["quasilinear.max_iter"] < 1:
        problems.append("quasilinear.max_iter: must be >= 1")
    if v["output.time_stride"] < 1:
        problems.append("output.time_stride: must be >= 1")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run description; raises :class:`ConfigError` listing every bad key."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"malformed config: {exc}"]) from None
    flat = flatten(doc)
    problems = [f"{k}: unknown key" for k in sorted(flat) if k not in SCHEMA]
    values: dict[str, Any] = {}
    for key, (parse, default) in SCHEMA.items():
        if key in flat:
            try:
                values[key] = parse(flat[key])
            except TypeError as exc:
                problems.append(f"{key}: {exc}")
        elif default is REQUIRED:
            if not (key == "fractional.beta" and flat.get("command") == "validate"):
                problems.append(f"{key}: missing required key")
        else:
            values[key] = default
    if problems:
        raise ConfigError(problems)
    values.setdefault("fractional.beta", (0.3,))
    _check_ranges(values, problems)
    if not problems:
        try:
            cfg_model = RunConfig(values["command"], values, "").model()
            cfg_model.second_moment()
        except ValueError as exc:
            problems.append(f"model: {exc}")
    if problems:
        raise ConfigError(problems)
    warnings: list[str] = []
    conditions: dict[str, bool] = {}
    beta, d = values["fractional.beta"], len(values["fractional.beta"])
    if values["command"] in ("solve-heat", "solve-quasilinear"):
        ok = heat_l2_condition(values["fractional.beta0"], beta, d)
        conditions["heat_l2_condition"] = ok
        if not ok:
            warnings.append("heat_l2_condition violated (2 beta0 + sum beta + 1 > d/2): "
                            "the solution has infinite variance in the continuum limit")
    if values["command"] == "solve-quasilinear":
        ok = picard_condition(beta, d)
        conditions["picard_condition"] = ok
        if not ok:
            warnings.append("picard_condition violated (beta_i > 1/2 - 1/d)")
    sha = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return RunConfig(values["command"], values, sha, tuple(warnings), conditions, frozenset(flat))


__all__ = ["COMMANDS", "ConfigError", "RunConfig", "SCHEMA", "flatten", "parse_config"]
