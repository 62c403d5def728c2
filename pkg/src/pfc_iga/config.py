"""Simulation configuration files.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored.  Lists are comma separated.  The initial condition is written
as a call, with positional or keyword arguments given as Python literals::

    epsilon = 0.25
    phi_bar = 0.07
    L = 50                  # or "50, 50" per direction
    m = 64
    dt = 0.5
    T = 10
    ic = constant_noise(0.01, seed=42)

Required keys: ``epsilon phi_bar L m dt T ic``.  Optional keys and defaults
are listed in :data:`OPTIONAL`.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass

from .model import ModelParams

IC_KINDS = {
    "constant_noise": ("amplitude", "seed"),
    "single_mode": ("amplitude", "k"),
    "hex_seeds": ("amplitude", "radius", "centers", "angles"),
}

REQUIRED = ("epsilon", "phi_bar", "L", "m", "dt", "T", "ic")

OPTIONAL = {
    "dim": None,
    "p": 2,
    "quad_points": None,
    "newton_tol": 1e-10,
    "newton_max_iter": 25,
    "linear_tol": 1e-9,
    "snapshot_every": 0,
    "output_dir": "output",
    "formats": ("vtk_structured",),
    "mode": "production",
    "scheme": "second",
    "solver": "iterative",
    "variant": "stabilized",
}

_FLOATS = {"epsilon", "phi_bar", "dt", "T", "newton_tol", "linear_tol"}
_INTS = {"dim", "p", "quad_points", "newton_max_iter", "snapshot_every"}
_CHOICES = {
    "mode": ("production", "test"),
    "scheme": ("first", "second"),
    "solver": ("iterative", "direct", "auto"),
    "variant": ("stabilized", "extrapolated"),
}
SNAPSHOT_FORMATS = ("vtk_structured", "raw_binary")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class InitialCondition:
    """Initial-condition descriptor; the mean density comes from the model."""

    kind: str
    amplitude: float = 0.0
    seed: int = 0
    k: tuple[int, ...] = ()
    radius: float = 0.0
    centers: tuple[tuple[float, ...], ...] = ()
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in IC_KINDS:
            raise ValueError(f"unknown initial condition {self.kind!r}; expected one of {sorted(IC_KINDS)}")
        if self.kind == "single_mode" and not self.k:
            raise ValueError("single_mode needs a wavevector index k")
        if self.kind == "hex_seeds":
            if not self.centers:
                raise ValueError("hex_seeds needs at least one seed center")
            if not self.radius > 0:
                raise ValueError("hex_seeds radius must be positive")
            if self.angles and len(self.angles) != len(self.centers):
                raise ValueError("hex_seeds needs one angle per seed center")

    def to_text(self) -> str:
        args = []
        for name in IC_KINDS[self.kind]:
            value = getattr(self, name)
            if name == "angles" and not value:
                continue
            args.append(f"{name}={value!r}")
        return f"{self.kind}({', '.join(args)})"


@dataclass(frozen=True)
class SimulationConfig:
    params: ModelParams
    ic: InitialCondition
    snapshot_every: int = 0
    output_dir: str = "output"
    formats: tuple[str, ...] = ("vtk_structured",)
    mode: str = "production"
    scheme: str = "second"
    solver: str = "iterative"
    variant: str = "stabilized"


def _parse_float(key, raw, line):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {raw!r}", line) from None
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite", line)
    return value


def _parse_int(key, raw, line):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} expects an integer, got {raw!r}", line) from None


def _parse_list(key, raw, line, conv):
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"{key} expects a value", line)
    return tuple(conv(key, s, line) for s in items)


def _literal(node, line):
    try:
        return ast.literal_eval(node)
    except ValueError:
        raise ConfigError("initial-condition arguments must be literals", line) from None


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_as_tuple(v) for v in value)
    return value


def parse_ic(raw: str, line: int | None = None) -> InitialCondition:
    try:
        tree = ast.parse(raw.strip(), mode="eval").body
    except SyntaxError:
        raise ConfigError(f"cannot parse initial condition {raw!r}", line) from None
    if not (isinstance(tree, ast.Call) and isinstance(tree.func, ast.Name)):
        raise ConfigError(f"initial condition must look like kind(args), got {raw!r}", line)
    kind = tree.func.id
    if kind not in IC_KINDS:
        raise ConfigError(f"unknown initial condition {kind!r}; expected one of {sorted(IC_KINDS)}", line)
    names = IC_KINDS[kind]
    if len(tree.args) > len(names):
        raise ConfigError(f"{kind} takes at most {len(names)} positional arguments", line)
    kwargs = {name: _literal(arg, line) for name, arg in zip(names, tree.args)}
    for kw in tree.keywords:
        name = "amplitude" if kw.arg == "A" else kw.arg
        if name not in names:
            raise ConfigError(f"{kind} has no argument {kw.arg!r}", line)
        if name in kwargs:
            raise ConfigError(f"{kind} argument {name!r} given twice", line)
        kwargs[name] = _literal(kw.value, line)
    try:
        if "amplitude" in kwargs:
            kwargs["amplitude"] = float(kwargs["amplitude"])
        if "radius" in kwargs:
            kwargs["radius"] = float(kwargs["radius"])
        if "seed" in kwargs:
            if isinstance(kwargs["seed"], bool) or not isinstance(kwargs["seed"], int):
                raise TypeError("seed must be an integer")
        if "k" in kwargs:
            kwargs["k"] = tuple(int(v) for v in _as_tuple(kwargs["k"]))
        if "centers" in kwargs:
            kwargs["centers"] = tuple(tuple(float(c) for c in p) for p in _as_tuple(kwargs["centers"]))
        if "angles" in kwargs:
            kwargs["angles"] = tuple(float(a) for a in _as_tuple(kwargs["angles"]))
        return InitialCondition(kind, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} arguments: {exc}", line) from None


def parse_config(text: str) -> SimulationConfig:
    """Parse and validate a configuration document."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    known = set(REQUIRED) | set(OPTIONAL)
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        content = raw_line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"expected 'key = value', got {content!r}", lineno)
        key, raw = (s.strip() for s in content.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if not raw:
            raise ConfigError(f"{key} expects a value", lineno)
        lines[key] = lineno
        if key in _FLOATS:
            values[key] = _parse_float(key, raw, lineno)
        elif key in _INTS:
            values[key] = _parse_int(key, raw, lineno)
        elif key == "L":
            values[key] = _parse_list(key, raw, lineno, _parse_float)
        elif key == "m":
            values[key] = _parse_list(key, raw, lineno, _parse_int)
        elif key == "formats":
            values[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif key == "ic":
            values[key] = parse_ic(raw, lineno)
        else:
            values[key] = raw

    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")

    def check(key, ok, message):
        if not ok:
            raise ConfigError(message, lines.get(key))

    eps = values["epsilon"]
    check("epsilon", 0 < eps <= 1, "epsilon must lie in (0, 1]")
    check("dt", values["dt"] > 0, "dt must be positive")
    check("T", values["T"] >= 0, "T must be non-negative")
    p = values.get("p", OPTIONAL["p"])
    check("p", p >= 2, "p must be >= 2")
    nq = values.get("quad_points") or p + 1
    check("quad_points", 1 <= nq <= 10, "quad_points must lie in [1, 10]")
    for key, choices in _CHOICES.items():
        if key in values:
            check(key, values[key] in choices, f"{key} must be one of {', '.join(choices)}")
    for fmt in values.get("formats", ()):
        check("formats", fmt in SNAPSHOT_FORMATS, f"unknown snapshot format {fmt!r}")
    check("newton_tol", values.get("newton_tol", 1.0) > 0, "newton_tol must be positive")
    check("linear_tol", values.get("linear_tol", 1.0) > 0, "linear_tol must be positive")
    check("newton_max_iter", values.get("newton_max_iter", 1) >= 1, "newton_max_iter must be >= 1")
    check("snapshot_every", values.get("snapshot_every", 0) >= 0, "snapshot_every must be >= 0")

    Ls, ms = values["L"], values["m"]
    dim = values.get("dim")
    if dim is None:
        dim = max(len(Ls), len(ms))
        if dim == 1:
            dim = 2
    check("dim", dim in (1, 2, 3), "dim must be 1, 2 or 3")
    if len(Ls) == 1:
        Ls = Ls * dim
    if len(ms) == 1:
        ms = ms * dim
    check("L", len(Ls) == dim, f"L lists {len(Ls)} lengths for dimension {dim}")
    check("m", len(ms) == dim, f"m lists {len(ms)} counts for dimension {dim}")
    check("L", all(x > 0 for x in Ls), "L must be positive")
    check("m", all(x > p for x in ms), f"m must exceed the degree p={p}")

    ic = values["ic"]
    if ic.kind == "single_mode":
        check("ic", len(ic.k) == dim, f"single_mode k needs {dim} components")
    if ic.kind == "hex_seeds":
        check("ic", dim >= 2, "hex_seeds needs dimension 2 or 3")
        check("ic", all(len(c) == dim for c in ic.centers), f"seed centers need {dim} coordinates")

    params = ModelParams(
        epsilon=eps,
        phi_bar=values["phi_bar"],
        lengths=Ls,
        elements=ms,
        dt=values["dt"],
        T=values["T"],
        degree=p,
        quad_points=nq,
        newton_tol=values.get("newton_tol", OPTIONAL["newton_tol"]),
        newton_max_iter=values.get("newton_max_iter", OPTIONAL["newton_max_iter"]),
        linear_tol=values.get("linear_tol", OPTIONAL["linear_tol"]),
    )
    extra = {k: values[k] for k in ("snapshot_every", "output_dir", "formats", "mode", "scheme", "solver", "variant") if k in values}
    return SimulationConfig(params=params, ic=ic, **extra)


def serialize_config(config: SimulationConfig) -> str:
    """Inverse of :func:`parse_config`."""
    p = config.params
    rows = [
        ("epsilon", repr(p.epsilon)),
        ("phi_bar", repr(p.phi_bar)),
        ("dim", str(p.dim)),
        ("L", ", ".join(repr(x) for x in p.lengths)),
        ("m", ", ".join(str(x) for x in p.elements)),
        ("p", str(p.degree)),
        ("quad_points", str(p.quad_points)),
        ("dt", repr(p.dt)),
        ("T", repr(p.T)),
        ("newton_tol", repr(p.newton_tol)),
        ("newton_max_iter", str(p.newton_max_iter)),
        ("linear_tol", repr(p.linear_tol)),
        ("ic", config.ic.to_text()),
        ("snapshot_every", str(config.snapshot_every)),
        ("output_dir", config.output_dir),
        ("formats", ", ".join(config.formats)),
        ("mode", config.mode),
        ("scheme", config.scheme),
        ("solver", config.solver),
        ("variant", config.variant),
    ]
    return "".join(f"{k} = {v}\n" for k, v in rows)


def load_config(path) -> SimulationConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
