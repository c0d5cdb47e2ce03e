"""Uniform lattices restricted to simple bounded domains.

Nodes are the points ``h*k`` (``k`` integer) lying strictly inside the domain;
everything outside is treated as an implicit zero (exterior Dirichlet data).
The distance to the boundary is evaluated from the exact shape formula, not
from the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import GridMismatch, NonFiniteSample, SpacingTooCoarse, UnsupportedShape

SHAPES = ("interval", "ball", "box")
MIN_NODES_PER_AXIS = 3

Formula = Union[float, Callable[[np.ndarray], np.ndarray]]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Lattice nodes strictly inside an interval, ball or box centred at 0.

    Attributes:
        dimension: spatial dimension N (1 or 2).
        shape: one of ``"interval"``, ``"ball"``, ``"box"``.
        h: lattice spacing.
        radius: ball radius or box/interval half-width.
        index: integer lattice coordinates, shape (n, N).
        delta: exact distance of each node to the boundary.
    """

    dimension: int
    shape: str
    h: float
    radius: float
    index: np.ndarray
    delta: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        return self.index * self.h

    @property
    def node_count(self) -> int:
        return self.index.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.h**self.dimension

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius * (np.sqrt(self.dimension) if self.shape == "box" else 1.0)

    @property
    def extent(self) -> int:
        """Largest |k| component over the nodes."""
        return int(np.abs(self.index).max())

    @property
    def r_ext(self) -> float:
        """Half-width of the lattice box that holds the padded exterior band."""
        return (self.extent + 1) * self.h

    def manifest(self) -> dict:
        return {
            "dimension": self.dimension,
            "shape": self.shape,
            "h": self.h,
            "node_count": self.node_count,
        }

    # -- lattice bookkeeping -------------------------------------------------

    @cached_property
    def _lookup(self) -> np.ndarray:
        # padded by one so that every neighbour of a node lands inside the array
        m = self.extent + 1
        table = -np.ones((2 * m + 1,) * self.dimension, dtype=np.int64)
        table[tuple((self.index + m).T)] = np.arange(self.node_count)
        return table

    def locate(self, k: np.ndarray) -> np.ndarray:
        """Node numbers of lattice points ``k`` (shape (..., N)); -1 when exterior."""
        k = np.asarray(k)
        if k.ndim == 1:
            return int(self.locate(k[None])[0])
        m = self.extent + 1
        shifted = k + m
        inside = np.all((shifted >= 0) & (shifted <= 2 * m), axis=-1)
        out = -np.ones(k.shape[:-1], dtype=np.int64)
        out[inside] = self._lookup[tuple(shifted[inside].T)]
        return out

    @cached_property
    def neighbours(self) -> np.ndarray:
        """Array (N, 2, n): node numbers of the -/+ neighbours along each axis."""
        nb = np.empty((self.dimension, 2, self.node_count), dtype=np.int64)
        for axis in range(self.dimension):
            step = np.zeros(self.dimension, dtype=np.int64)
            step[axis] = 1
            nb[axis, 0] = self.locate(self.index - step)
            nb[axis, 1] = self.locate(self.index + step)
        nb.setflags(write=False)
        return nb

    def reflection(self, axis: int | None = None) -> np.ndarray:
        """Permutation sending node i to the node at x_i reflected (through 0, or in one axis)."""
        k = self.index.copy()
        if axis is None:
            k = -k
        else:
            k[:, axis] = -k[:, axis]
        perm = self.locate(k)
        if np.any(perm < 0):
            raise GridMismatch("node set is not symmetric under the requested reflection")
        return perm

    def to_lattice(self, values: np.ndarray, pad: int = 0) -> np.ndarray:
        """Scatter node values into a dense zero-padded lattice array."""
        m = self.extent + pad
        out = np.zeros((2 * m + 1,) * self.dimension, dtype=np.result_type(values, float))
        out[tuple((self.index + m).T)] = values
        return out

    # -- discrete derivatives ------------------------------------------------

    def _neighbour_values(
        self, values: np.ndarray, axis: int, side: int
    ) -> tuple[np.ndarray, np.ndarray]:
        nb = self.neighbours[axis, side]
        ext = nb < 0
        vals = values[..., np.where(ext, 0, nb)]
        vals[..., ext] = 0.0
        return vals, ext

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Centered differences with zero exterior extension.

        Where exactly one neighbour is exterior the one-sided difference
        toward the exterior zero is used.  Accepts arrays (..., n) and
        returns (..., n, N).
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.node_count:
            raise GridMismatch("values do not match the grid")
        out = np.empty(values.shape + (self.dimension,))
        for a in range(self.dimension):
            lo, lo_ext = self._neighbour_values(values, a, 0)
            hi, hi_ext = self._neighbour_values(values, a, 1)
            d = (hi - lo) / (2 * self.h)
            only_hi = hi_ext & ~lo_ext
            only_lo = lo_ext & ~hi_ext
            d[..., only_hi] = -values[..., only_hi] / self.h
            d[..., only_lo] = values[..., only_lo] / self.h
            out[..., a] = d
        return out

    def grad_norm(self, values: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.gradient(values), axis=-1)

    def upwind_drift(self, values: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Upwinded <B, grad u> for explicit stepping (exterior values are 0).

        ``B`` has shape (n, N).  Forward differences where B_a > 0 and backward
        differences otherwise, so an explicit Euler step is a convex
        combination under dt*sum|B_a| <= h.
        """
        values = np.asarray(values, dtype=float)
        out = np.zeros_like(values)
        for a in range(self.dimension):
            lo, _ = self._neighbour_values(values, a, 0)
            hi, _ = self._neighbour_values(values, a, 1)
            fwd = (hi - values) / self.h
            bwd = (values - lo) / self.h
            b = B[..., a]
            out += np.where(b > 0, b * fwd, b * bwd)
        return out


def build_grid(dimension: int, shape: str, h: float, radius: float = 1.0) -> DomainGrid:
    """Lattice nodes of spacing ``h`` strictly inside the domain.

    ``shape`` is ``"interval"`` (N=1), ``"ball"`` or ``"box"``; ``radius`` is
    the ball radius or the half-width of the box.
    """
    if dimension not in (1, 2):
        raise UnsupportedShape(f"dimension must be 1 or 2, got {dimension}")
    if shape not in SHAPES or (shape == "interval" and dimension != 1):
        raise UnsupportedShape(f"unsupported shape {shape!r} in dimension {dimension}")
    if not h > 0 or not radius > 0:
        raise SpacingTooCoarse("h and radius must be positive")

    per_axis = 2 * int(np.floor(radius / h * (1 - 1e-12))) + 1
    if per_axis < MIN_NODES_PER_AXIS:
        raise SpacingTooCoarse(
            f"h={h} leaves {per_axis} nodes per axis (need {MIN_NODES_PER_AXIS})"
        )

    m = int(np.ceil(radius / h))
    axis = np.arange(-m, m + 1)
    k = np.stack(np.meshgrid(*([axis] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    x = k * h
    if shape == "ball":
        delta = radius - np.linalg.norm(x, axis=1)
    else:
        delta = radius - np.abs(x).max(axis=1)
    keep = delta > 1e-9 * h
    return DomainGrid(
        dimension=dimension,
        shape=shape,
        h=float(h),
        radius=float(radius),
        index=_frozen(k[keep]),
        delta=_frozen(delta[keep]),
    )


@dataclass(frozen=True, eq=False)
class Field:
    """Real values on the interior nodes; zero outside the domain."""

    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.node_count,):
            raise GridMismatch(
                f"expected {self.grid.node_count} values, got shape {v.shape}"
            )
        object.__setattr__(self, "values", _frozen(v))

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, c * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """A trajectory u(x, t_j) on a strictly increasing time grid starting at 0."""

    grid: DomainGrid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")
        if v.shape != (t.size, self.grid.node_count):
            raise GridMismatch(f"values shape {v.shape} does not match times/grid")
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self) -> int:
        return self.times.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, j: int) -> Field:
        return Field(self.grid, self.values[j])

    def level(self, t: float) -> int:
        """Index of the time level closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))


def _same_grid(a: DomainGrid, b: DomainGrid) -> None:
    if a is b:
        return
    if a.node_count != b.node_count or a.h != b.h or not np.array_equal(a.index, b.index):
        raise GridMismatch("fields live on different grids")


def sample_function(grid: DomainGrid, formula: Formula, t: float = 0.0) -> Field:
    """Point samples of ``formula`` on the interior nodes.

    ``formula`` may be a constant, a callable of the (n, N) node array, or a
    parsed expression (see :mod:`fkpz.expr`) which additionally sees δ and t.
    """
    if callable(formula):
        if getattr(formula, "uses_grid", False):
            vals = formula(grid.nodes, delta=grid.delta, t=t)
        else:
            vals = formula(grid.nodes)
    else:
        vals = float(formula)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (grid.node_count,))
    if not np.all(np.isfinite(vals)):
        raise NonFiniteSample("formula is not finite on every interior node")
    return Field(grid, vals)
