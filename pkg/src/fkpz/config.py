"""Experiment configuration: TOML file with ``grid``, ``physics``, ``data`` and ``options`` tables.

Example::

    kind = "solve-kpz"
    output = "runs/kpz"
    seed = 0

    [grid]
    dimension = 2
    shape = "ball"
    h = 0.0625

    [physics]
    s = 0.75
    alpha = 1.1
    T = 1.0
    dt = 0.00390625

    [data]
    f = "0.5*exp(-4*|x|^2)"
    u0 = 0
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigInvalid
from .expr import Expression, parse_formula
from .fraclap import CONVENTIONS
from .grid import SHAPES

KINDS = (
    "calibrate",
    "kernel-check",
    "green-check",
    "solve-linear",
    "decay",
    "solve-kpz",
    "scan-alpha",
    "drift",
    "blowup",
    "nonexistence-scan",
)

# physics keys each kind cannot run without
_REQUIRED_PHYSICS = {
    "calibrate": ("s",),
    "kernel-check": ("s",),
    "green-check": ("s",),
    "solve-linear": ("s", "T", "dt"),
    "decay": ("s",),
    "solve-kpz": ("s", "alpha", "T", "dt"),
    "scan-alpha": ("s",),
    "drift": ("s", "T", "dt"),
    "blowup": ("s", "alpha", "T", "dt"),
    "nonexistence-scan": ("s",),
}
_NEEDS_ALPHA = ("solve-kpz", "blowup")
SWEEPABLE = {"alpha": "physics.alpha", "s": "physics.s", "h": "grid.h", "m": "data.m"}


@dataclass(frozen=True)
class GridConfig:
    dimension: int
    shape: str
    h: float
    radius: float = 1.0


@dataclass(frozen=True)
class PhysicsConfig:
    s: float
    convention: str = "fourier-symbol"
    alpha: float | None = None
    T: float | None = None
    dt: float | None = None


@dataclass(frozen=True)
class DataConfig:
    """Source, initial datum, weight exponent, drift and integrability tag.

    ``f`` and ``u0`` are constants or :class:`~fkpz.expr.Expression`; ``B``
    is a tuple with one entry per dimension.
    """

    f: float | Expression = 0.0
    u0: float | Expression = 0.0
    beta: float | None = None
    B: tuple | None = None
    m: float = float("inf")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    grid: GridConfig
    physics: PhysicsConfig
    data: DataConfig
    output: Path
    seed: int = 0
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def option(self, name: str, default: Any = None) -> Any:
        return self.options.get(name, default)


def _number(table: dict, key: str, prefix: str, required: bool, default=None) -> float | None:
    if key not in table:
        if required:
            raise ConfigInvalid(f"{prefix}.{key}", "missing required key")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(f"{prefix}.{key}", f"expected a number, got {value!r}")
    return float(value)


def _table(raw: dict, name: str, required: bool) -> dict:
    if name not in raw:
        if required:
            raise ConfigInvalid(name, "missing required table")
        return {}
    if not isinstance(raw[name], dict):
        raise ConfigInvalid(name, "expected a table")
    return raw[name]


def _grid(raw: dict, kind: str) -> GridConfig:
    # the periodic calibration and the threshold table only need the dimension
    needed = kind not in ("calibrate", "scan-alpha")
    t = _table(raw, "grid", True)
    dim = _number(t, "dimension", "grid", True)
    if dim not in (1.0, 2.0):
        raise ConfigInvalid("grid.dimension", "must be 1 or 2")
    shape = t.get("shape", "interval" if dim == 1 else "ball")
    if shape not in SHAPES:
        raise ConfigInvalid("grid.shape", f"must be one of {SHAPES}")
    h = _number(t, "h", "grid", needed)
    if h is not None and not h > 0:
        raise ConfigInvalid("grid.h", "must be positive")
    radius = _number(t, "radius", "grid", False, 1.0)
    if not radius > 0:
        raise ConfigInvalid("grid.radius", "must be positive")
    return GridConfig(int(dim), shape, h if h is not None else 0.0, radius)


def _physics(raw: dict, kind: str) -> PhysicsConfig:
    t = _table(raw, "physics", True)
    req = _REQUIRED_PHYSICS[kind]
    s = _number(t, "s", "physics", True)
    if not 0.5 < s < 1.0:
        raise ConfigInvalid("physics.s", f"must lie in (0.5, 1), got {s}")
    conv = t.get("convention", "fourier-symbol")
    if conv not in CONVENTIONS:
        raise ConfigInvalid("physics.convention", f"must be one of {CONVENTIONS}")
    alpha = _number(t, "alpha", "physics", "alpha" in req)
    if kind in _NEEDS_ALPHA and not alpha > 1:
        raise ConfigInvalid("physics.alpha", f"must exceed 1, got {alpha}")
    T = _number(t, "T", "physics", "T" in req)
    if T is not None and not T > 0:
        raise ConfigInvalid("physics.T", "must be positive")
    dt = _number(t, "dt", "physics", "dt" in req)
    if dt is not None and not (dt > 0 and (T is None or dt <= T)):
        raise ConfigInvalid("physics.dt", "must lie in (0, T]")
    return PhysicsConfig(s, conv, alpha, T, dt)


def _data(raw: dict, kind: str, dimension: int | None) -> DataConfig:
    t = _table(raw, "data", False)
    f = parse_formula(t.get("f", 0.0), "data.f")
    u0 = parse_formula(t.get("u0", 0.0), "data.u0")
    beta = _number(t, "beta", "data", False)
    m = _number(t, "m", "data", False, float("inf"))
    if not m >= 1:
        raise ConfigInvalid("data.m", "must be at least 1")
    B = None
    if "B" in t:
        entries = t["B"] if isinstance(t["B"], list) else [t["B"]]
        if dimension is not None and len(entries) != dimension:
            raise ConfigInvalid("data.B", f"needs {dimension} components, got {len(entries)}")
        B = tuple(parse_formula(e, f"data.B[{i}]") for i, e in enumerate(entries))
    elif kind == "drift":
        raise ConfigInvalid("data.B", "missing required key")
    return DataConfig(f, u0, beta, B, m)


def from_dict(raw: dict, base: Path | None = None) -> ExperimentConfig:
    """Validate a parsed configuration tree."""
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigInvalid("kind", f"must be one of {KINDS}, got {kind!r}")
    grid = _grid(raw, kind)
    physics = _physics(raw, kind)
    data = _data(raw, kind, grid.dimension)
    out = raw.get("output", "fkpz-output")
    if not isinstance(out, str) or not out:
        raise ConfigInvalid("output", "expected a directory path")
    output = Path(out)
    if base is not None and not output.is_absolute():
        output = base / output
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigInvalid("seed", "expected a non-negative integer")
    options = _table(raw, "options", False)
    return ExperimentConfig(kind, grid, physics, data, output, seed, dict(options), copy.deepcopy(raw))


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML configuration file.

    Relative output directories are resolved against the file's directory.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigInvalid("<file>", f"{path}: {exc}") from None
    return from_dict(raw, path.parent)


def override(raw: dict, param: str, value: float) -> dict:
    """Copy of ``raw`` with one sweepable parameter replaced."""
    if param not in SWEEPABLE:
        raise ConfigInvalid("sweep.param", f"must be one of {tuple(SWEEPABLE)}, got {param!r}")
    table, key = SWEEPABLE[param].split(".")
    out = copy.deepcopy(raw)
    out.setdefault(table, {})[key] = value
    return out
