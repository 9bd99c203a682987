"""Problem-specification files: sections [grid] [physics] [noise] [cost] [control].

Parsing is strict: unknown sections or keys fail fast with a field-level
message.  Potentials and targets are either named built-ins (`harmonic`,
`gaussian`, `plane_wave k=<int>`, `constant`, `zero`) with parameters, or
snapshot files in the core field format (`file path=...`).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Field, Grid, GridSpec, make_grid, read_field
from .model import AdmissibleSet, CostSpec, NoiseSpec, PhysicsSpec, Problem

__all__ = ["ConfigError", "ProblemConfig", "parse_problem_text", "parse_problem_file", "build_field"]


class ConfigError(ValueError):
    """Invalid or unknown configuration content; carries the offending field."""


_SECTIONS = {
    "grid": {"d", "n", "L"},
    "physics": {"lambda", "alpha", "x0", "x0_normalize", "v0"},  # + v1..vm
    "noise": {"intensities", "seed"},  # + e1..eN
    "cost": {"gamma1", "gamma2", "gamma3", "x_target", "x_running"},
    "control": {"T", "shape", "lower", "upper", "center", "radius", "u0"},
}


def _floats(text: str) -> list:
    return [float(tok) for tok in text.split()]


def _parse_params(tokens, where: str) -> dict:
    params = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"{where}: malformed parameter {tok!r} (expected key=value)")
        key, val = tok.split("=", 1)
        params[key] = val
    return params


def _vector(text: str, d: int, where: str) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts = parts * d
    if len(parts) != d:
        raise ConfigError(f"{where}: expected {d} comma-separated components")
    return np.asarray(parts)


def build_field(expr: str, grid: Grid, base_dir=None) -> np.ndarray:
    """Evaluate a field expression on the grid; returns a complex array.

    `file path=...` entries are resolved relative to base_dir (the directory
    of the config file) when the path is not absolute.
    """
    tokens = expr.split()
    if not tokens:
        raise ConfigError("empty field expression")
    name, params = tokens[0], _parse_params(tokens[1:], tokens[0])
    d = grid.dimension

    def param(key, default=None):
        if key in params:
            return params.pop(key)
        if default is None:
            raise ConfigError(f"{name}: missing parameter {key!r}")
        return default

    if name == "zero":
        out = np.zeros(grid.shape, dtype=complex)
    elif name == "constant":
        out = np.full(grid.shape, complex(float(param("c"))))
    elif name == "harmonic":
        a = float(param("a", "1.0"))
        out = a * sum(x**2 for x in grid.nodes).astype(complex)
    elif name == "gaussian":
        amp = float(param("amp", "1.0"))
        width = float(param("width", "1.0"))
        center = _vector(param("center", "0.0"), d, name)
        kvec = _vector(param("k", "0"), d, name)
        arg = sum((x - c) ** 2 for x, c in zip(grid.nodes, center))
        out = amp * np.exp(-arg / (2.0 * width**2)).astype(complex)
        if np.any(kvec != 0):
            phase = sum(
                k * (np.pi / grid.extent) * x for k, x in zip(kvec, grid.nodes)
            )
            out = out * np.exp(1j * phase)
    elif name == "plane_wave":
        amp = float(param("amp", "1.0"))
        kvec = _vector(param("k"), d, name)
        if np.any(kvec != np.round(kvec)):
            raise ConfigError("plane_wave: k must be integer lattice indices")
        phase = sum(k * (np.pi / grid.extent) * x for k, x in zip(kvec, grid.nodes))
        out = amp * np.exp(1j * phase)
    elif name == "file":
        target = Path(param("path"))
        if base_dir is not None and not target.is_absolute():
            target = Path(base_dir) / target
        out = read_field(target, grid).values.copy()
    else:
        raise ConfigError(f"unknown field builtin {name!r}")
    if params:
        raise ConfigError(f"{name}: unknown parameters {sorted(params)}")
    return out


@dataclass
class ProblemConfig:
    """A fully parsed problem: dynamics, cost, control set, and run defaults."""

    problem: Problem
    cost: CostSpec
    admissible: AdmissibleSet
    u0: np.ndarray  # constant initial control value, shape (m,)
    horizon: float
    x0: Field
    text: str


def parse_problem_text(text: str, base_dir=None) -> ProblemConfig:
    def field(expr):
        return build_field(expr, grid, base_dir)

    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    for section in cp.sections():
        base = section
        if base not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = _SECTIONS[base]
        for key in cp[section]:
            if key in allowed:
                continue
            if base == "physics" and key.startswith("v") and key[1:].isdigit():
                continue
            if base == "noise" and key.startswith("e") and key[1:].isdigit():
                continue
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
    for required in ("grid", "physics", "cost", "control"):
        if not cp.has_section(required):
            raise ConfigError(f"missing section [{required}]")

    sec = cp["grid"]
    try:
        spec = GridSpec(sec.getint("d"), sec.getfloat("L"), sec.getint("n"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[grid]: {exc}") from exc
    grid = make_grid(spec)

    sec = cp["physics"]
    if "lambda" not in sec or "alpha" not in sec or "x0" not in sec:
        raise ConfigError("[physics] needs lambda, alpha and x0")
    lam = sec.getint("lambda")
    alpha = sec.getfloat("alpha")
    v0 = field(sec.get("v0", "zero"))
    v_indices = sorted(
        int(k[1:]) for k in sec if k.startswith("v") and k[1:].isdigit() and k != "v0"
    )
    if not v_indices:
        raise ConfigError("[physics] needs at least one control potential v1")
    if v_indices != list(range(1, len(v_indices) + 1)):
        raise ConfigError("[physics] control potentials v1..vm must be contiguous")
    controls = [field(sec[f"v{j}"]) for j in v_indices]
    try:
        physics = PhysicsSpec(grid, lam, alpha, v0, tuple(controls))
    except ValueError as exc:
        raise ConfigError(f"[physics]: {exc}") from exc
    x0 = Field(grid, field(sec["x0"]))
    if sec.getboolean("x0_normalize", fallback=True):
        x0 = x0.normalized()

    if cp.has_section("noise"):
        sec = cp["noise"]
        intensities = _floats(sec.get("intensities", ""))
        e_indices = {int(k[1:]) for k in sec if k.startswith("e") and k[1:].isdigit()}
        if not e_indices <= set(range(1, len(intensities) + 1)):
            raise ConfigError("[noise] profile index exceeds the number of intensities")
        profiles = []
        for jn in range(1, len(intensities) + 1):
            profiles.append(field(sec.get(f"e{jn}", "constant c=1.0")))
        seed = sec.getint("seed", fallback=0)
        try:
            noise = NoiseSpec(grid, tuple(intensities), tuple(profiles), seed)
        except ValueError as exc:
            raise ConfigError(f"[noise]: {exc}") from exc
    else:
        noise = NoiseSpec.off(grid)

    sec = cp["cost"]
    if "x_target" not in sec:
        raise ConfigError("[cost] needs x_target")
    x_target = Field(grid, field(sec["x_target"]))
    x_running = None
    if "x_running" in sec and sec["x_running"].strip() != "zero":
        x_running = field(sec["x_running"])
    try:
        cost = CostSpec(
            grid,
            sec.getfloat("gamma1", fallback=0.0),
            sec.getfloat("gamma2", fallback=0.0),
            sec.getfloat("gamma3", fallback=0.0),
            x_target,
            x_running,
        )
    except ValueError as exc:
        raise ConfigError(f"[cost]: {exc}") from exc

    sec = cp["control"]
    if "T" not in sec:
        raise ConfigError("[control] needs the horizon T")
    horizon = sec.getfloat("T")
    if horizon <= 0:
        raise ConfigError("[control]: T must be positive")
    shape = sec.get("shape", fallback="box")
    m = physics.m
    try:
        if shape == "box":
            lower = _floats(sec.get("lower", " ".join(["0.0"] * m)))
            upper = _floats(sec.get("upper", " ".join(["1.0"] * m)))
            admissible = AdmissibleSet.box(lower, upper)
        elif shape == "ball":
            center = _floats(sec.get("center", " ".join(["0.0"] * m)))
            radius = sec.getfloat("radius", fallback=1.0)
            admissible = AdmissibleSet.ball(center, radius)
        else:
            raise ConfigError(f"[control]: unknown shape {shape!r}")
    except ValueError as exc:
        raise ConfigError(f"[control]: {exc}") from exc
    if admissible.m != m:
        raise ConfigError(
            f"[control]: set dimension {admissible.m} does not match m = {m} control potentials"
        )
    if "u0" in sec:
        u0 = np.asarray(_floats(sec["u0"]))
        if u0.shape != (m,):
            raise ConfigError(f"[control]: u0 needs {m} components")
        if not admissible.contains(u0, tol=1e-12):
            raise ConfigError("[control]: u0 is not in the admissible set")
    else:
        u0 = admissible.project(np.zeros(m))

    problem = Problem(grid, physics, noise)
    return ProblemConfig(problem, cost, admissible, u0, horizon, x0, text)


def parse_problem_file(path) -> ProblemConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_problem_text(fh.read(), base_dir=Path(path).parent)
