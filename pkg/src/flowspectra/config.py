"""Experiment configuration: INI sections ``geometry``, ``flow``, ``weight``, ``run`` and optional ``verify``.

Example::

    [geometry]
    generator = icosphere
    radius = 1.0
    level = 4

    [flow]
    law = mcf

    [weight]
    kind = expression
    expression = z / 2

    [run]
    t_end = 0.2
    cfl = 0.25
    cadence = 20
    output = out
    seed = 0
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import mesh as m
from .flow import SpeedLaw, parse_law


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending section and field."""


GENERATORS = ("icosphere", "polygon", "ellipsoid", "perturbed_icosphere", "file")
WEIGHT_KINDS = ("constant", "expression", "file")
THEOREMS = ("tt1", "psi-phi", "hk", "variation", "lemma21", "metric-cmp")


@dataclass(frozen=True)
class GeometrySpec:
    generator: str
    params: dict[str, Any]

    def build(self) -> m.Mesh:
        p = self.params
        if self.generator == "icosphere":
            return m.icosphere(p["radius"], p["level"])
        if self.generator == "polygon":
            return m.regular_polygon(p["vertices"], p["radius"])
        if self.generator == "ellipsoid":
            return m.ellipsoid(p["a"], p["b"], p["c"], p["level"])
        if self.generator == "perturbed_icosphere":
            return m.perturbed_icosphere(p["radius"], p["level"], p["amplitude"], p["seed"])
        return m.load_mesh(p["path"])


@dataclass(frozen=True)
class WeightSpec:
    kind: str
    value: float = 0.0
    expression: str = ""
    path: Path | None = None

    def sample(self, mesh: m.Mesh) -> np.ndarray:
        """Per-vertex weight field ``phi`` on the initial mesh."""
        n = mesh.n_vertices
        if self.kind == "constant":
            return np.full(n, self.value)
        if self.kind == "expression":
            v = mesh.vertices
            z = v[:, 2] if v.shape[1] > 2 else np.zeros(n)
            out = evaluate(self.expression, x=v[:, 0], y=v[:, 1], z=z)
            return m.as_weight_field(np.broadcast_to(out, (n,)).astype(float), n)
        values = np.loadtxt(self.path, delimiter=",", ndmin=1, comments="#")
        return m.as_weight_field(values, n)


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: GeometrySpec
    law: SpeedLaw
    weight: WeightSpec
    t_end: float
    cfl: float = 0.25
    cadence: int = 1
    output: Path = Path("out")
    seed: int = 0
    h_ceiling: float | None = None
    checks: tuple[str, ...] = ()
    verify: dict[str, Any] = field(default_factory=dict)
    source: Path | None = None


# ---------------------------------------------------------------------------
# expression grammar: numbers, x, y, z, + - * /, unary minus, parentheses, exp(.)

_BINOPS: dict[type, Callable] = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
}
_UNOPS: dict[type, Callable] = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_VARS = ("x", "y", "z")


def parse_expression(text: str) -> ast.Expression:
    """Parse and validate; raises :class:`ConfigError` on anything outside the grammar."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)) or type(node) in _BINOPS or type(node) in _UNOPS:
            continue
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            continue
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            continue
        if isinstance(node, ast.Name) and node.id in _VARS + ("exp",):
            continue
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id == "exp"
            and len(node.args) == 1
            and not node.keywords
        ):
            continue
        raise ConfigError(f"unsupported element {ast.dump(node)[:40]!r} in expression {text!r}")
    return tree


def evaluate(text: str, **coords):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "exp":
                raise ConfigError("exp must be called")
            return coords[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](ev(node.operand))
        return np.exp(ev(node.args[0]))

    return ev(parse_expression(text))


# ---------------------------------------------------------------------------
# loading


_REQUIRED = object()


class _Section:
    def __init__(self, parser: configparser.ConfigParser, name: str, required: bool = True):
        if not parser.has_section(name):
            if required:
                raise ConfigError(f"missing section [{name}]")
            self.items: dict[str, str] = {}
        else:
            self.items = dict(parser.items(name))
        self.name = name
        self.used: set[str] = set()

    def _raw(self, key, default):
        self.used.add(key)
        if key not in self.items:
            if default is _REQUIRED:
                raise ConfigError(f"[{self.name}] {key}: required field missing")
            return default
        return self.items[key]

    def text(self, key, default=_REQUIRED) -> str:
        return self._raw(key, default).strip()

    def number(self, key, default=_REQUIRED, kind=float):
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return raw
        try:
            val = kind(raw.strip())
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected {kind.__name__}, got {raw!r}") from None
        if kind is float and not math.isfinite(val):
            raise ConfigError(f"[{self.name}] {key}: must be finite, got {raw!r}")
        return val

    def optional_number(self, key, kind=float):
        return self.number(key, kind=kind) if key in self.items else None

    def check_unknown(self) -> None:
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise ConfigError(f"[{self.name}] unknown field(s): {', '.join(extra)}")


def _positive(sec: _Section, key: str, value, strict=True):
    if value <= 0 if strict else value < 0:
        raise ConfigError(f"[{sec.name}] {key}: must be {'positive' if strict else 'non-negative'}, got {value}")
    return value


def _resolve(base: Path, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment configuration.

    Relative paths inside the file are resolved against its directory.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return config_from_parser(parser, path.parent, source=path)
    except ConfigError as exc:
        line = _locate(path.read_text().splitlines(), str(exc))
        raise ConfigError(f"{path}:{line}: {exc}" if line else f"{path}: {exc}") from None


def _locate(lines: list[str], message: str) -> int | None:
    """1-based line of the ``[section] key`` named at the start of ``message``."""
    if not message.startswith("["):
        return None
    section, _, rest = message[1:].partition("]")
    key = rest.strip().split(":")[0].split("/")[0].strip()
    current = None
    for i, raw in enumerate(lines, 1):
        text = raw.strip()
        if text.startswith("[") and text.endswith("]"):
            current = text[1:-1].strip()
        elif current == section and text.split("=")[0].split(":")[0].strip().lower() == key:
            return i
    return None


def config_from_parser(
    parser: configparser.ConfigParser, base: Path, source: Path | None = None
) -> ExperimentConfig:
    known = {"geometry", "flow", "weight", "run", "verify"}
    for s in parser.sections():
        if s not in known:
            raise ConfigError(f"unknown section [{s}]")

    g = _Section(parser, "geometry")
    gen = g.text("generator").lower()
    if gen not in GENERATORS:
        raise ConfigError(f"[geometry] generator: expected one of {', '.join(GENERATORS)}, got {gen!r}")
    params: dict[str, Any] = {}
    if gen in ("icosphere", "perturbed_icosphere", "polygon"):
        params["radius"] = _positive(g, "radius", g.number("radius", 1.0))
    if gen in ("icosphere", "perturbed_icosphere", "ellipsoid"):
        params["level"] = _positive(g, "level", g.number("level", 3, kind=int), strict=False)
    if gen == "polygon":
        params["vertices"] = g.number("vertices", 256, kind=int)
        if params["vertices"] < 3:
            raise ConfigError(f"[geometry] vertices: need at least 3, got {params['vertices']}")
    if gen == "ellipsoid":
        for ax in "abc":
            params[ax] = _positive(g, ax, g.number(ax))
    if gen == "perturbed_icosphere":
        params["amplitude"] = _positive(g, "amplitude", g.number("amplitude", 0.05), strict=False)
        params["seed"] = g.number("seed", 0, kind=int)
    if gen == "file":
        params["path"] = _resolve(base, g.text("path"))
        if not params["path"].is_file():
            raise ConfigError(f"[geometry] path: file {params['path']} does not exist")
    g.check_unknown()

    f = _Section(parser, "flow")
    law_name = f.text("law", "mcf")
    k = f.optional_number("k", kind=int)
    try:
        law = parse_law(law_name, k) if law_name.lower() == "power" else parse_law(law_name)
    except ValueError as exc:
        raise ConfigError(f"[flow] law/k: {exc}") from None
    if k is not None and law_name.lower() != "power" and k != 1:
        raise ConfigError(f"[flow] k: only meaningful for law = power, got law = {law_name}")
    f.check_unknown()

    w = _Section(parser, "weight", required=False)
    wkind = w.text("kind", "constant").lower()
    if wkind not in WEIGHT_KINDS:
        raise ConfigError(f"[weight] kind: expected one of {', '.join(WEIGHT_KINDS)}, got {wkind!r}")
    if wkind == "constant":
        weight = WeightSpec("constant", value=w.number("value", 0.0))
    elif wkind == "expression":
        expr = w.text("expression")
        try:
            parse_expression(expr)
        except ConfigError as exc:
            raise ConfigError(f"[weight] expression: {exc}") from None
        weight = WeightSpec("expression", expression=expr)
    else:
        p = _resolve(base, w.text("path"))
        if not p.is_file():
            raise ConfigError(f"[weight] path: file {p} does not exist")
        weight = WeightSpec("file", path=p)
    w.check_unknown()

    r = _Section(parser, "run")
    t_end = _positive(r, "t_end", r.number("t_end"))
    cfl = r.number("cfl", 0.25)
    if not 0.0 < cfl <= 1.0:
        raise ConfigError(f"[run] cfl: must lie in (0, 1], got {cfl}")
    cadence = r.number("cadence", 1, kind=int)
    if cadence < 1:
        raise ConfigError(f"[run] cadence: must be >= 1, got {cadence}")
    output = _resolve(base, r.text("output", "out"))
    seed = r.number("seed", 0, kind=int)
    h_ceiling = r.optional_number("h_ceiling")
    if h_ceiling is not None:
        _positive(r, "h_ceiling", h_ceiling)
    checks = tuple(c.strip() for c in r.text("checks", "").split(",") if c.strip())
    for c in checks:
        if c not in THEOREMS:
            raise ConfigError(f"[run] checks: unknown theorem {c!r}; known: {', '.join(THEOREMS)}")
    r.check_unknown()

    v = _Section(parser, "verify", required=False)
    verify = {
        "tol": v.number("tol", 0.05),
        "tol_mono": v.number("tol_mono", 1e-6),
        "variant": v.text("variant", "text"),
        "eps": tuple(float(e) for e in v.text("eps", "0.05, 0.1, 0.3").split(",") if e.strip()),
        "floor": v.number("floor", 0.0),
    }
    if verify["variant"] not in ("text", "symmetric"):
        raise ConfigError(f"[verify] variant: expected text or symmetric, got {verify['variant']!r}")
    if any(e <= 0 for e in verify["eps"]):
        raise ConfigError("[verify] eps: values must be positive")
    v.check_unknown()

    return ExperimentConfig(
        geometry=GeometrySpec(gen, params), law=law, weight=weight, t_end=t_end, cfl=cfl,
        cadence=cadence, output=output, seed=seed, h_ceiling=h_ceiling, checks=checks,
        verify=verify, source=source,
    )
