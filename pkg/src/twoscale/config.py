"""Run configuration: a small INI-like format with JSON values.

::

    # comment
    [geometry]
    variant = bridged_water        # bare words are strings
    r_solid = 0.2
    bridge_axes = [0]

    [macro]
    u10 = "0.2 * exp(-x)"          # expressions in x, y (and z) are allowed for initial fields

All quantities are nondimensional (see the scaling table in the README).
Every key has a default; unknown sections or keys are rejected.
"""

from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingSection, ParseError, UnknownKey

# kind tags: float, int, bool, str, floats, ints, strs, tensor, field, series
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "geometry": {
        "dim": ("int", 2),
        "variant": ("str", "bridged_water"),
        "r_solid": ("float", 0.2),
        "r_water": ("float", 0.35),
        "bridge_width": ("float", 0.1),
        "bridge_axes": ("ints", [0]),
        "h": ("float", 0.02),
        "n_quad": ("int", 16),
    },
    "diffusion": {
        "d1": ("tensor", 1.0),
        "d2": ("tensor", 1.0),
        "d3": ("tensor", 5.0),
        "d4": ("tensor", 0.5),
        "time_samples": ("floats", []),
        "time_factors": ("floats", []),
        "rtol": ("float", 1e-10),
    },
    "kinetics": {
        "r_law": ("str", "truncated_linear"),
        "c_r": ("float", 1.0),
        "k_half": ("float", 1.0),
        "q_law": ("str", "linear_cutoff"),
        "beta_max": ("float", 1.0),
        "k1": ("float", 1.0),
        "k2": ("float", 0.5),
        "k3": ("float", 1.0),
        "a": ("float", 0.5),
        "b": ("float", 1.0),
        "rate_support": ("str", "cell"),
        "m1": ("float", 1.0),
        "m2": ("float", 2.0),
        "m3": ("float", 4.0),
        "m4": ("float", 1.0),
        "m5": ("float", 1.0),
        "strict_a4": ("bool", False),
    },
    "macro": {
        "box": ("floats", [0.0, 1.0]),
        "n_cells": ("ints", [20, 20]),
        "dirichlet_faces": ("strs", ["x-"]),
        "u3_dirichlet": ("series", 1.0),
        "u10": ("field", 0.2),
        "u20": ("field", 0.1),
        "u30": ("field", 0.0),
        "u40": ("field", 0.0),
        "u50": ("field", 0.0),
        "dt": ("float", 0.01),
        "t_end": ("float", 1.0),
        "n_outputs": ("int", 10),
        "output_times": ("floats", []),
        "capacity": ("str", "unit"),
        "linear_solver": ("str", "direct"),
    },
    "micro": {
        "eps_list": ("ints", [4, 8, 16]),
        "cells_per_period": ("int", 16),
        "dt": ("float", 1e-3),
        "t_end": ("float", 0.1),
        "macro_cells": ("int", 64),
    },
    "output": {
        "directory": ("str", "out"),
        "snapshot_every": ("int", 1),
    },
}

REQUIRED = {
    "cell": ("geometry", "diffusion", "kinetics"),
    "validate": ("geometry", "diffusion", "kinetics", "macro"),
    "run": ("geometry", "diffusion", "kinetics", "macro"),
    "micro": ("geometry", "diffusion", "kinetics", "macro", "micro"),
}

DEFAULT_CONFIG = Path(__file__).with_name("configs") / "default.cfg"


@dataclass(frozen=True, eq=False)
class RunConfig:
    values: dict = field(default_factory=dict)
    present: frozenset = frozenset()

    def get(self, section: str, key: str):
        try:
            return self.values[section][key]
        except KeyError:
            raise UnknownKey(f"[{section}] {key}") from None

    def section(self, name: str) -> dict:
        if name not in self.values:
            raise MissingSection(f"section [{name}] is not defined")
        return dict(self.values[name])

    def require(self, command: str) -> None:
        missing = [s for s in REQUIRED[command] if s not in self.present]
        if missing:
            raise MissingSection(f"'{command}' needs section(s) {', '.join(f'[{m}]' for m in missing)}")

    def with_values(self, section: str, **updates) -> "RunConfig":
        """Copy with validated overrides (used for CLI flags)."""
        values = {s: dict(v) for s, v in self.values.items()}
        for key, raw in updates.items():
            if key not in SCHEMA[section]:
                raise UnknownKey(f"unknown key '{key}' in [{section}]")
            values[section][key] = _coerce(SCHEMA[section][key][0], raw, f"[{section}] {key}")
        return RunConfig(values, self.present | {section})

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.present == other.present and self.values == other.values

    def render(self) -> str:
        out = []
        for name in SCHEMA:
            if name not in self.present:
                continue
            out.append(f"[{name}]")
            for key, value in self.values[name].items():
                out.append(f"{key} = {json.dumps(value)}")
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        import hashlib
        return hashlib.sha256(self.render().encode()).hexdigest()


def defaults() -> dict:
    return {s: {k: _copy(v) for k, (_, v) in keys.items()} for s, keys in SCHEMA.items()}


def _copy(v):
    return json.loads(json.dumps(v))


_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w]*)\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][\w]*)\s*=")


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def parse_config(text: str) -> RunConfig:
    values = defaults()
    present: set[str] = set()
    seen: set[tuple[str, str]] = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        body = line.strip()
        if not body:
            continue
        col = len(line) - len(line.lstrip()) + 1
        if body.startswith("["):
            m = _SECTION.match(body)
            if not m:
                raise ParseError("malformed section header", lineno, col)
            section = m.group(1)
            if section not in SCHEMA:
                raise UnknownKey(f"unknown section [{section}] (line {lineno})")
            if section in present:
                raise ParseError(f"duplicate section [{section}]", lineno, col)
            present.add(section)
            continue
        m = _KEY.match(body)
        if not m:
            raise ParseError("expected 'key = value'", lineno, col)
        if section is None:
            raise ParseError("key outside of any section", lineno, col)
        key = m.group(1)
        if key not in SCHEMA[section]:
            raise UnknownKey(f"unknown key '{key}' in [{section}] (line {lineno})")
        if (section, key) in seen:
            raise ParseError(f"duplicate key '{key}' in [{section}]", lineno, col)
        seen.add((section, key))
        text_value = body[m.end():].strip()
        vcol = col + m.end() + (len(body[m.end():]) - len(body[m.end():].lstrip()))
        if not text_value:
            raise ParseError(f"missing value for '{key}'", lineno, vcol)
        value = _literal(text_value)
        try:
            values[section][key] = _coerce(SCHEMA[section][key][0], value, f"[{section}] {key}")
        except ConfigError as exc:
            raise ParseError(str(exc), lineno, vcol) from None
    return RunConfig(values, frozenset(present))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _literal(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        lowered = text.lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        return text  # bare word or unquoted expression


def _coerce(kind: str, value, where: str):
    def fail(expected):
        raise ConfigError(f"{where}: expected {expected}, got {value!r}")

    def number(v, integral=False):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail("an integer" if integral else "a number")
        if integral:
            if float(v) != int(v):
                fail("an integer")
            return int(v)
        if not math.isfinite(v):
            fail("a finite number")
        return float(v)

    if kind == "float":
        return number(value)
    if kind == "int":
        return number(value, integral=True)
    if kind == "bool":
        if not isinstance(value, bool):
            fail("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if kind in ("floats", "ints", "strs"):
        if not isinstance(value, list):
            fail("a list")
        return [_coerce(kind[:-1], v, where) for v in value]
    if kind == "tensor":
        if isinstance(value, list):
            rows = [[number(x) for x in (row if isinstance(row, list) else fail("a square matrix"))]
                    for row in value]
            if any(len(r) != len(rows) for r in rows):
                fail("a square matrix")
            return rows
        return number(value)
    if kind == "field":
        if isinstance(value, str):
            compile_expression(value, where)
            return value
        return number(value)
    if kind == "series":
        if isinstance(value, list):
            pts = []
            for p in value:
                if not (isinstance(p, list) and len(p) == 2):
                    fail("a list of [t, value] pairs")
                pts.append([number(p[0]), number(p[1])])
            if not pts:
                fail("a nonempty series")
            return pts
        return number(value)
    raise AssertionError(kind)


# ---------------------------------------------------------------- expressions

_FUNCS = {name: getattr(np, name) for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs")}
_FUNCS.update(min=np.minimum, max=np.maximum)
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
            ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod)


def compile_expression(expr: str, where: str = "expression"):
    """Compile an arithmetic expression in x, y, z restricted to a whitelist of nodes."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: invalid expression {expr!r}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"{where}: '{type(node).__name__}' not allowed in {expr!r}")
        if isinstance(node, ast.Name) and node.id not in (*_FUNCS, *_CONSTS, "x", "y", "z"):
            raise ConfigError(f"{where}: unknown name '{node.id}' in {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"{where}: only whitelisted functions may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"{where}: only numeric constants allowed")
    return compile(tree, where, "eval")


def evaluate_field(value, points: np.ndarray) -> np.ndarray:
    """Evaluate a constant or expression at points of shape (n, dim)."""
    points = np.atleast_2d(points)
    if not isinstance(value, str):
        return np.full(len(points), float(value))
    env = dict(_FUNCS, **_CONSTS)
    for k, name in enumerate("xyz"):
        env[name] = points[:, k] if k < points.shape[1] else np.zeros(len(points))
    out = eval(compile_expression(value), {"__builtins__": {}}, env)  # noqa: S307 - whitelisted AST
    return np.broadcast_to(np.asarray(out, dtype=float), (len(points),)).copy()


# ------------------------------------------------------------------- builders

def geometry_from(config: RunConfig):
    from .unit_cell import build_geometry

    g = config.section("geometry")
    return build_geometry(dim=g["dim"], r_solid=g["r_solid"], r_water=g["r_water"],
                          variant=g["variant"], bridge_width=g["bridge_width"],
                          bridge_axes=tuple(g["bridge_axes"]))


def diffusion_tensor(config: RunConfig, species: int) -> np.ndarray:
    dim = config.get("geometry", "dim")
    d = config.get("diffusion", f"d{species}")
    if isinstance(d, list):
        return np.asarray(d, dtype=float)
    return float(d) * np.eye(dim)


def diffusion_specs(config: RunConfig) -> dict:
    from .corrector import DiffusionSpec, Representation

    sec = config.section("diffusion")
    if len(sec["time_samples"]) != len(sec["time_factors"]):
        raise ConfigError("[diffusion] time_samples and time_factors differ in length")
    rep = Representation.TIME_SEPARABLE if sec["time_samples"] else Representation.CONSTANT_TENSOR
    return {s: DiffusionSpec(species=s, tensor=diffusion_tensor(config, s), representation=rep,
                             time_samples=tuple(sec["time_samples"]),
                             time_factors=tuple(sec["time_factors"]))
            for s in (1, 2, 3, 4)}


def rate_law_from(config: RunConfig, k3=None):
    from .kinetics import RateLaw

    k = config.section("kinetics")
    return RateLaw(r_kind=k["r_law"], c_r=k["c_r"], k_half=k["k_half"], beta_max=k["beta_max"],
                   k3=k["k3"] if k3 is None else k3, q_kind=k["q_law"])


def bounds_from(config: RunConfig):
    """Ceilings and rate extrema; rates are cell constants so sup = inf."""
    from .kinetics import BoundsA4

    k = config.section("kinetics")
    return BoundsA4(m1=k["m1"], m2=k["m2"], m3=k["m3"], m4=k["m4"], m5=k["m5"],
                    a_sup=k["a"], b_sup=k["b"], k1_sup=k["k1"], k2_sup=k["k2"], k1_inf=k["k1"])


def macro_grid_from(config: RunConfig):
    from .macro_sim import MacroGrid

    m = config.section("macro")
    if len(m["box"]) != 2:
        raise ConfigError("[macro] box must be [lo, hi]")
    if len(m["n_cells"]) != config.get("geometry", "dim"):
        raise ConfigError("[macro] n_cells needs one entry per dimension")
    try:
        return MacroGrid(lo=m["box"][0], hi=m["box"][1], n_cells=tuple(m["n_cells"]),
                         dirichlet_faces=frozenset(m["dirichlet_faces"]))
    except ValueError as exc:
        raise ConfigError(f"[macro] {exc}") from exc


def initial_samples(config: RunConfig, name: str) -> np.ndarray:
    """Initial field ``name`` evaluated at the macro cell midpoints."""
    grid = macro_grid_from(config)
    return evaluate_field(config.get("macro", name), grid.centers())


def dirichlet_samples(config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    data = config.get("macro", "u3_dirichlet")
    if isinstance(data, list):
        arr = np.asarray(data, dtype=float)
        return arr[:, 0], arr[:, 1]
    return np.array([0.0]), np.array([float(data)])


def output_times(config: RunConfig, t_end: float | None = None) -> list[float]:
    m = config.section("macro")
    t_end = m["t_end"] if t_end is None else t_end
    if m["output_times"]:
        return sorted(t for t in m["output_times"] if 0 < t <= t_end)
    n = max(1, m["n_outputs"])
    return [t_end * (i + 1) / n for i in range(n)]
