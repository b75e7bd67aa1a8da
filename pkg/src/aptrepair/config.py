"""Scenario configuration files, presets and resolution into a :class:`Scenario`.

Random inputs are drawn from ``SeedSequence(seed)``: the first child seeds
the topology generator, the second draws, in this order, a1, a2, b and the
service weights u (each uniform on (0, 1], weights then scaled to sum to U).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .control import SweepSettings
from .epidemic import ExpectedState, NodeParams
from .errors import ConfigError
from .impact import CostFunctions
from .scenario import GradingSettings, Scenario
from .topology import SCHEDULE_KINDS, TopologySchedule, generate_schedule

SCHEMA_VERSION = 1

_num_or_list = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}
_random_or = {"oneOf": [{"const": "random"}, {"type": "number", "minimum": 0},
                        {"type": "array", "items": {"type": "number", "minimum": 0}}]}
_pair = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2}
_cost = {"type": "object", "properties": {"family": {"enum": ["sqrt", "linear", "quadratic"]},
                                          "coef": _num_or_list},
         "additionalProperties": False}

SCHEMA = {
    "type": "object",
    "required": ["version", "n_nodes", "schedule", "U", "U_n"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "n_nodes": {"type": "integer", "minimum": 1},
        "schedule": {
            "type": "object",
            "properties": {
                "kind": {"enum": list(SCHEDULE_KINDS)},
                "intervals": {"type": "array", "minItems": 1, "items": _pair},
                "mean_degree": {"type": "integer", "minimum": 2},
                "rewire_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "n_base": {"type": "integer", "minimum": 1},
                "file": {"type": "string"},
                "segments": {"type": "array"},
            },
            "oneOf": [{"required": ["kind", "intervals"]}, {"required": ["file"]}, {"required": ["segments"]}],
            "additionalProperties": False,
        },
        "U": {"type": "number", "exclusiveMinimum": 0},
        "U_n": {"type": "number", "exclusiveMinimum": 0},
        "alpha": _num_or_list,
        "beta": _num_or_list,
        "bounds": {
            "type": "object",
            "properties": {"delta": _pair, "lam": _pair, "gamma": _pair},
            "additionalProperties": False,
        },
        "a1": _random_or,
        "a2": _random_or,
        "b": _random_or,
        "weights": _random_or,
        "costs": {"type": "object", "properties": {"phi": _cost, "rho1": _cost, "rho2": _cost},
                  "additionalProperties": False},
        "E0": {"oneOf": [
            {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 3, "maxItems": 3},
            {"type": "object", "required": ["H", "M", "S"],
             "properties": {k: {"type": "array", "items": {"type": "number"}} for k in "HMS"},
             "additionalProperties": False},
        ]},
        "grid_step": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "grading": {
            "type": "object",
            "properties": {
                "t_w": {"type": "number", "exclusiveMinimum": 0},
                "rho_phi": {"type": "number", "minimum": 0},
                "Z_phi": {"type": "number", "minimum": 0},
                "max_backtracks": {"type": ["integer", "null"], "minimum": 0},
                "worst_case": {"type": "boolean"},
                "utility_mode": {"enum": ["lcc", "sum", "component"]},
                "quarantine_threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "max_iters": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "relaxation": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "adaptive": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "attacker": {
            "type": "object",
            "properties": {"alpha_scale": {"type": "number", "minimum": 0},
                           "beta_scale": {"type": "number", "minimum": 0}},
            "additionalProperties": False,
        },
    },
}

_BASE = {
    "version": SCHEMA_VERSION,
    "n_nodes": 100,
    "U": 1000.0,
    "U_n": 800.0,
    "alpha": 0.1,
    "beta": 0.1,
    "bounds": {"delta": [0.1, 0.4], "lam": [0.1, 0.6], "gamma": [0.1, 0.5]},
    "a1": "random",
    "a2": "random",
    "b": "random",
    "weights": "random",
    "costs": {k: {"family": "sqrt", "coef": 1.0} for k in ("phi", "rho1", "rho2")},
    "E0": [0.8, 0.1, 0.1],
    "grid_step": 0.01,
    "seed": 0,
}

PRESETS = {
    # seven slots: the printed first four intervals, continued in steps of 2 to T = 12
    "setting1": {"name": "setting1", "schedule": {
        "kind": "static", "intervals": [[0, 2], [2, 3], [3, 4], [4, 6], [6, 8], [8, 10], [10, 12]],
        "mean_degree": 4, "rewire_prob": 0.1}},
    "setting2": {"name": "setting2", "schedule": {
        "kind": "periodic", "intervals": [[0, 2], [2, 3], [3, 4], [4, 6]],
        "mean_degree": 4, "rewire_prob": 0.1, "n_base": 2}},
    "setting3": {"name": "setting3", "schedule": {
        "kind": "general", "intervals": [[0, 2], [2, 5], [5, 6], [6, 9], [9, 11], [11, 12]],
        "mean_degree": 4, "rewire_prob": 0.1}},
}


def _path_of(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if isinstance(err.instance, dict) and k not in err.instance]
        if missing:
            parts.append(missing[0])
    return ".".join(parts) or "<root>"


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(list(e.absolute_path)), str(e.message)))
    if errors:
        err = errors[0]
        raise ConfigError(_path_of(err), err.message)
    if not 0 < data["U_n"] < data["U"]:
        raise ConfigError("U_n", f"must lie strictly between 0 and U={data['U']}")


@dataclass
class ScenarioConfig:
    """Validated scenario description; ``data`` is the JSON document."""

    data: dict
    base_dir: Path | None = None

    def __post_init__(self):
        validate(self.data)

    @property
    def name(self) -> str:
        return self.data.get("name", "scenario")

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    def with_overrides(self, seed=None, grid_step=None, output_dir=None) -> "ScenarioConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = int(seed)
        if grid_step is not None:
            d["grid_step"] = float(grid_step)
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        return ScenarioConfig(d, self.base_dir)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def preset(cls, name: str) -> "ScenarioConfig":
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        d = copy.deepcopy(_BASE)
        d.update(copy.deepcopy(PRESETS[name]))
        return cls(d)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError("<root>", f"cannot read {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        return cls(data, p.parent)


def load_scenario(source) -> ScenarioConfig:
    """Preset name or path to a JSON config."""
    if isinstance(source, str) and source in PRESETS:
        return ScenarioConfig.preset(source)
    return ScenarioConfig.from_file(source)


def _vector(value, n, rng, name):
    if value == "random":
        return 1.0 - rng.random(n)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(name, f"expected {n} values, got {arr.size}")
    return arr


def _schedule(cfg: ScenarioConfig, n: int, seed) -> TopologySchedule:
    spec = cfg.data["schedule"]
    if "file" in spec:
        p = Path(spec["file"])
        if not p.is_absolute() and cfg.base_dir is not None:
            p = cfg.base_dir / p
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("schedule.file", str(exc)) from exc
        sched = TopologySchedule.from_dict(data)
    elif "segments" in spec:
        sched = TopologySchedule.from_dict({"segments": spec["segments"]})
    else:
        sched = generate_schedule(spec["kind"], n, [tuple(iv) for iv in spec["intervals"]], seed,
                                  mean_degree=spec.get("mean_degree", 4), rewire_prob=spec.get("rewire_prob", 0.1),
                                  n_base=spec.get("n_base", 2))
    if sched.n_nodes != n:
        raise ConfigError("schedule", f"schedule has {sched.n_nodes} nodes, n_nodes is {n}")
    return sched


def resolve(cfg: ScenarioConfig) -> Scenario:
    """Build every array of the scenario deterministically from the config and seed."""
    d = cfg.data
    n = int(d["n_nodes"])
    graph_seed, coef_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    sched = _schedule(cfg, n, graph_seed)
    rng = np.random.default_rng(coef_seed)
    a1 = _vector(d.get("a1", "random"), n, rng, "a1")
    a2 = _vector(d.get("a2", "random"), n, rng, "a2")
    b = _vector(d.get("b", "random"), n, rng, "b")
    u = _vector(d.get("weights", "random"), n, rng, "weights")
    if u.sum() <= 0:
        raise ConfigError("weights", "weights must have a positive sum")
    u = u * (float(d["U"]) / u.sum())
    bounds = d.get("bounds", {})
    try:
        params = NodeParams.uniform(
            n, alpha=_vector(d.get("alpha", 0.1), n, rng, "alpha"), beta=_vector(d.get("beta", 0.1), n, rng, "beta"),
            delta=tuple(bounds.get("delta", (0.1, 0.4))), lam=tuple(bounds.get("lam", (0.1, 0.6))),
            gamma=tuple(bounds.get("gamma", (0.1, 0.5))), a1=a1, a2=a2, b=b)
    except ValueError as exc:
        raise ConfigError("bounds", str(exc)) from exc
    e0 = d.get("E0", [0.8, 0.1, 0.1])
    if isinstance(e0, dict):
        E0 = ExpectedState(*(np.asarray(e0[k], dtype=float) for k in "HMS"))
    else:
        if sum(e0) > 1 + 1e-12:
            raise ConfigError("E0", "H + M + S exceeds 1")
        E0 = ExpectedState.uniform(n, *e0)
    if E0.n != n or not E0.is_valid():
        raise ConfigError("E0", "initial state must be a valid per-node distribution")
    costs = CostFunctions.from_dict(d.get("costs", {}))
    sw = d.get("sweep", {})
    gr = d.get("grading", {})
    att = d.get("attacker", {})
    return Scenario(
        name=cfg.name, schedule=sched, params=params, costs=costs, E0=E0, weights=u, U_n=float(d["U_n"]),
        grid_step=float(d.get("grid_step", 0.01)), sweep=SweepSettings(grid_step=float(d.get("grid_step", 0.01)), **sw),
        grading=GradingSettings(**gr), seed=cfg.seed,
        alpha_scale=float(att.get("alpha_scale", 1.0)), beta_scale=float(att.get("beta_scale", 1.0)))
