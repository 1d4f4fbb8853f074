"""Scenario files: the reproducibility unit.

A scenario is a JSON document naming the grid, time mesh, memory rate,
initial data, operators, set field, growth envelope, and solver settings.
Field base maps and initial profiles are referenced by name with explicit
parameters, and keys carry their units (lambda_per_time, final_time).
Bundled scenarios ship with the package and can be addressed by bare name.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .operators import (
    CustomOperatorA,
    LinearOperatorA,
    PLaplacian,
    SignSwitchOperator,
    asymmetric_b,
    fractional_laplacian_b,
    identity_scaled_b,
    laplacian_b,
    laplacian_matrix,
    negated_laplacian,
)
from .setvalued import (
    BallField,
    BoxField,
    ConstantCenter,
    Extremal,
    GrowthEnvelope,
    MinimalNorm,
    PolytopeField,
    ProjectPrevious,
    SingletonField,
)
from .solver import ProblemData
from .spaces import Exponents, Grid, TimeMesh, sine_profile

__all__ = [
    "ScenarioError",
    "SolverSettings",
    "Scenario",
    "load_scenario_dict",
    "parse_scenario",
    "load_scenario",
    "apply_overrides",
    "bundled_scenario_names",
    "scenario_hash",
]


class ScenarioError(ValueError):
    """Malformed scenario; the message names the offending field."""


@dataclass
class SolverSettings:
    method: str
    rule: object
    tol_newton: float
    tol_fp: float
    max_outer: int
    tol_set: float
    tol_eq: float


@dataclass
class Scenario:
    name: str
    data: ProblemData
    envelope: GrowthEnvelope
    settings: SolverSettings
    outputs: list[str]
    raw: dict


def _require(d: dict, key: str, path: str) -> Any:
    if key not in d:
        raise ScenarioError(f"{path}.{key}: missing")
    return d[key]


def _number(d: dict, key: str, path: str, default=None, positive=False) -> float:
    if key not in d:
        if default is None:
            raise ScenarioError(f"{path}.{key}: missing")
        return float(default)
    value = d[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScenarioError(f"{path}.{key}: expected a number, got {value!r}")
    if positive and not value > 0:
        raise ScenarioError(f"{path}.{key}: must be positive, got {value}")
    return float(value)


def _profile(spec: dict, grid: Grid, path: str) -> np.ndarray:
    kind = _require(spec, "profile", path)
    if kind == "zeros":
        return grid.zeros()
    if kind == "constant":
        return _number(spec, "value", path) * np.ones(grid.n)
    if kind == "sine":
        mode = int(_number(spec, "mode", path, default=1))
        amp = _number(spec, "amplitude", path, default=1.0)
        return sine_profile(grid, mode=mode, amplitude=amp)
    if kind == "values":
        values = _require(spec, "values", path)
        arr = np.asarray(values, dtype=float)
        if arr.shape != (grid.n,):
            raise ScenarioError(f"{path}.values: expected {grid.n} values, got {arr.shape}")
        return arr
    raise ScenarioError(f"{path}.profile: unknown profile {kind!r}")


def _vector_map(spec: dict, grid: Grid, path: str):
    kind = _require(spec, "map", path)
    if kind == "zero":
        return lambda t, v: np.zeros(grid.n)
    if kind == "scaled_state":
        factor = _number(spec, "factor", path)
        return lambda t, v: factor * v
    if kind == "constant":
        vec = _profile({"profile": spec.get("profile", "constant"), **spec}, grid, path)
        return lambda t, v: vec
    if kind == "decaying_sine":
        amp = _number(spec, "amplitude", path, default=1.0)
        mode = int(_number(spec, "mode", path, default=1))
        decay = _number(spec, "decay_per_time", path, default=1.0)
        base = sine_profile(grid, mode=mode, amplitude=amp)
        return lambda t, v: math.exp(-decay * t) * base
    raise ScenarioError(f"{path}.map: unknown vector map {kind!r}")


def _scalar_map(spec: dict, path: str):
    kind = _require(spec, "map", path)
    if kind == "constant":
        value = _number(spec, "value", path)
        if value < 0:
            raise ScenarioError(f"{path}.value: radius must be nonnegative")
        return lambda t, v: value
    if kind == "decaying":
        value = _number(spec, "value", path)
        decay = _number(spec, "decay_per_time", path, default=1.0)
        return lambda t, v: value * math.exp(-decay * t)
    raise ScenarioError(f"{path}.map: unknown scalar map {kind!r}")


def _build_operator_a(spec: dict, grid: Grid, exps: Exponents, path: str):
    kind = _require(spec, "kind", path)
    if kind == "p_laplacian":
        return PLaplacian(grid, exps.p)
    if kind == "linear":
        matrix = spec.get("matrix", "identity")
        scale = _number(spec, "scale", path, default=1.0)
        if matrix == "identity":
            m = np.eye(grid.n)
        elif matrix == "laplacian":
            m = laplacian_matrix(grid)
        elif matrix == "laplacian_plus_identity":
            m = laplacian_matrix(grid) + np.eye(grid.n)
        else:
            raise ScenarioError(f"{path}.matrix: unknown matrix {matrix!r}")
        return LinearOperatorA(grid, scale * m)
    if kind == "zero":
        return LinearOperatorA(grid, np.zeros((grid.n, grid.n)))
    if kind == "negated_laplacian":
        return negated_laplacian(grid)
    if kind == "sign_switch":
        return SignSwitchOperator(grid, jump=_number(spec, "jump", path, default=1.0))
    if kind == "exp_entrywise":
        return CustomOperatorA(grid, np.exp)
    raise ScenarioError(f"{path}.kind: unknown operator {kind!r}")


def _build_operator_b(spec: dict, grid: Grid, path: str):
    kind = _require(spec, "kind", path)
    if kind == "laplacian":
        return laplacian_b(grid)
    if kind == "fractional_laplacian":
        s = _number(spec, "s", path)
        if not 0.5 < s < 1.0:
            raise ScenarioError(f"{path}.s: must lie in (1/2, 1), got {s}")
        return fractional_laplacian_b(grid, s)
    if kind == "identity_scaled":
        return identity_scaled_b(grid, _number(spec, "scale", path, default=1.0, positive=True))
    if kind == "asymmetric":
        return asymmetric_b(grid, bump=_number(spec, "bump", path, default=1e-3))
    raise ScenarioError(f"{path}.kind: unknown operator {kind!r}")


def _build_field(spec: dict, grid: Grid, path: str):
    kind = _require(spec, "kind", path)
    if kind == "singleton":
        return SingletonField(_vector_map(_require(spec, "point", path), grid, f"{path}.point"))
    if kind == "ball":
        return BallField(
            center_map=_vector_map(_require(spec, "center", path), grid, f"{path}.center"),
            radius_map=_scalar_map(_require(spec, "radius", path), f"{path}.radius"),
        )
    if kind == "box":
        return BoxField(
            lower_map=_vector_map(_require(spec, "lower", path), grid, f"{path}.lower"),
            upper_map=_vector_map(_require(spec, "upper", path), grid, f"{path}.upper"),
        )
    if kind == "polytope":
        specs = _require(spec, "vertices", path)
        if not isinstance(specs, list) or not specs:
            raise ScenarioError(f"{path}.vertices: expected a nonempty list")
        maps = tuple(
            _vector_map(s, grid, f"{path}.vertices[{i}]") for i, s in enumerate(specs)
        )
        return PolytopeField(vertex_maps=maps)
    raise ScenarioError(f"{path}.kind: unknown field {kind!r}")


def _build_rule(spec: dict, grid: Grid, path: str):
    name = spec.get("rule", "minimal_norm")
    if name == "minimal_norm":
        return MinimalNorm()
    if name == "project_previous":
        return ProjectPrevious()
    if name == "constant_center":
        return ConstantCenter()
    if name == "extremal":
        direction = _profile(_require(spec, "direction", path), grid, f"{path}.direction")
        if not np.any(direction):
            raise ScenarioError(f"{path}.direction: must be nonzero")
        return Extremal(direction)
    raise ScenarioError(f"{path}.rule: unknown rule {name!r}")


def parse_scenario(doc: dict) -> Scenario:
    """Validate a scenario document and build the problem it describes."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: expected a JSON object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name: missing or empty")

    grid_spec = _require(doc, "grid", "scenario")
    n = grid_spec.get("n")
    if not isinstance(n, int) or n < 1:
        raise ScenarioError("grid.n: expected an integer >= 1")
    grid = Grid(n=n, length=_number(grid_spec, "length", "grid", default=1.0, positive=True))

    time_spec = _require(doc, "time", "scenario")
    steps = time_spec.get("steps")
    if not isinstance(steps, int) or steps < 1:
        raise ScenarioError("time.steps: expected an integer >= 1")
    mesh = TimeMesh(steps=steps, final_time=_number(time_spec, "final_time", "time", positive=True))

    rate = _number(doc, "lambda_per_time", "scenario", positive=True)
    p = _number(doc.get("exponents", {}), "p", "exponents", default=2.0)
    if p < 2.0:
        raise ScenarioError(f"exponents.p: must be >= 2, got {p}")
    exps = Exponents(p=p)

    initial = _require(doc, "initial", "scenario")
    v0 = _profile(_require(initial, "v0", "initial"), grid, "initial.v0")
    u0 = _profile(_require(initial, "u0", "initial"), grid, "initial.u0")

    op_a = _build_operator_a(_require(doc, "operator_a", "scenario"), grid, exps, "operator_a")
    op_b = _build_operator_b(_require(doc, "operator_b", "scenario"), grid, "operator_b")
    field_obj = _build_field(_require(doc, "field", "scenario"), grid, "field")

    env_spec = _require(doc, "envelope", "scenario")
    a_const = _number(env_spec, "a_constant", "envelope")
    if a_const < 0:
        raise ScenarioError("envelope.a_constant: must be nonnegative")
    b = _number(env_spec, "b", "envelope", positive=True)
    envelope = GrowthEnvelope(a=lambda t: a_const, b=b, q=exps.q)

    solver_spec = doc.get("solver", {})
    method = solver_spec.get("method", "marching")
    if method not in ("marching", "fixed_point"):
        raise ScenarioError(f"solver.method: unknown method {method!r}")
    settings = SolverSettings(
        method=method,
        rule=_build_rule(solver_spec, grid, "solver"),
        tol_newton=_number(solver_spec, "tol_newton", "solver", default=1e-12, positive=True),
        tol_fp=_number(solver_spec, "tol_fp", "solver", default=1e-10, positive=True),
        max_outer=int(_number(solver_spec, "max_outer", "solver", default=50, positive=True)),
        tol_set=_number(solver_spec, "tol_set", "solver", default=1e-9, positive=True),
        tol_eq=_number(solver_spec, "tol_eq", "solver", default=1e-8, positive=True),
    )

    outputs = doc.get("outputs", ["trajectory", "ledger", "report"])
    if not isinstance(outputs, list) or any(not isinstance(o, str) for o in outputs):
        raise ScenarioError("outputs: expected a list of strings")

    data = ProblemData(
        grid=grid,
        mesh=mesh,
        rate=rate,
        u0=u0,
        v0=v0,
        op_a=op_a,
        op_b=op_b,
        field=field_obj,
        exps=exps,
    )
    return Scenario(
        name=name,
        data=data,
        envelope=envelope,
        settings=settings,
        outputs=outputs,
        raw=doc,
    )


def bundled_scenario_names() -> list[str]:
    root = resources.files("evomem").joinpath("scenarios")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario_dict(path_or_name: str) -> dict:
    """Read a scenario document from a file path or a bundled name."""
    path = Path(path_or_name)
    if path.is_file():
        text = path.read_text()
        source = str(path)
    else:
        ref = resources.files("evomem").joinpath("scenarios", f"{path_or_name}.json")
        if not ref.is_file():
            raise ScenarioError(
                f"scenario {path_or_name!r} is neither a file nor a bundled scenario "
                f"(bundled: {', '.join(bundled_scenario_names())})"
            )
        text = ref.read_text()
        source = f"bundled:{path_or_name}"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: expected a JSON object at the top level")
    return doc


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply --set key.path=value pairs; values parse as JSON, else strings."""
    out = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override {item!r}: expected key.path=value")
        key, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        parts = key.split(".")
        target = out
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                target[part] = {}
            target = target[part]
        target[parts[-1]] = value
    return out


def load_scenario(path_or_name: str, overrides: list[str] | None = None) -> Scenario:
    doc = load_scenario_dict(path_or_name)
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_scenario(doc)


def scenario_hash(doc: dict) -> str:
    import hashlib

    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
