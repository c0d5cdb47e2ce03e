"""Spectral Dirichlet heat kernel, Green function and two-sided estimate checks.

Everything is built from the full eigendecomposition ``A = V diag(mu) V^T`` so
semigroup identities hold to rounding.  Kernels are densities: the discrete
solution of ``u_t + A u = 0`` is ``u(t) = P(t) u0 h^N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionTooSmall,
    EigFailure,
    InsufficientSamples,
    NonPositiveTime,
    SingularOperator,
)
from .fraclap import FracParams, OperatorMatrix
from .grid import DomainGrid

EIG_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class KernelBundle:
    """Eigenpairs of the operator, ascending, with positive first eigenvector.

    ``vectors`` are Euclidean-orthonormal columns; ``phi1`` is the first one
    rescaled to unit discrete L2 norm (``sum phi1^2 h^N = 1``).
    """

    operator: OperatorMatrix
    mu: np.ndarray
    vectors: np.ndarray

    @property
    def grid(self) -> DomainGrid:
        return self.operator.grid

    @property
    def complete(self) -> bool:
        return self.mu.size == self.grid.node_count

    @property
    def lambda1(self) -> float:
        return float(self.mu[0])

    @property
    def phi1(self) -> np.ndarray:
        return self.vectors[:, 0] / np.sqrt(self.grid.cell_volume)

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """Spectral coefficients ``V^T u`` (nodal values in, Euclidean frame)."""
        return self.vectors.T @ np.asarray(u, dtype=float)

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        return self.vectors @ c

    def evolve(self, u0: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        """Heat flow ``P(t) u0 h^N``; ``t`` may be an array, giving shape (len(t), n)."""
        c = self.coefficients(u0)
        t = np.asarray(t, dtype=float)
        damp = np.exp(-np.multiply.outer(t, self.mu))
        return (damp * c) @ self.vectors.T


def eigendecompose(A: OperatorMatrix, count: int | None = None) -> KernelBundle:
    """Lowest ``count`` eigenpairs (all of them by default)."""
    n = A.node_count
    count = n if count is None else int(count)
    if not 1 <= count <= n:
        raise EigFailure(f"count must lie in [1, {n}], got {count}")
    M = A.dense
    try:
        if count == n:
            mu, V = scipy.linalg.eigh(M)
        else:
            mu, V = scipy.linalg.eigh(M, subset_by_index=[0, count - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigFailure(str(exc)) from exc
    if not np.all(np.isfinite(mu)) or mu[0] <= 0:
        raise EigFailure("spectrum is not positive")
    if V[:, 0].sum() < 0:
        V[:, 0] *= -1
    if np.any(V[:, 0] <= 0):
        raise EigFailure("first eigenvector changes sign")
    resid = np.linalg.norm(M @ V - V * mu, axis=0)
    if resid.max() > EIG_RESIDUAL_TOL * max(1.0, mu[-1]):
        raise EigFailure(f"eigen-residual {resid.max():.2e} too large")
    mu.setflags(write=False)
    V.setflags(write=False)
    return KernelBundle(A, mu, V)


@dataclass(frozen=True, eq=False)
class KernelSlice:
    """Dense ``P(x_i, y_j, t)`` at a fixed time."""

    t: float
    P: np.ndarray
    cell_volume: float

    @property
    def row_mass(self) -> np.ndarray:
        return self.P.sum(axis=1) * self.cell_volume


def kernel_slice(K: KernelBundle, t: float) -> KernelSlice:
    if not t > 0:
        raise NonPositiveTime(f"t must be positive, got {t}")
    V = K.vectors
    P = (V * np.exp(-K.mu * t)) @ V.T / K.grid.cell_volume
    return KernelSlice(float(t), P, K.grid.cell_volume)


def reference_H(r: np.ndarray, t: float, N: int, s: float) -> np.ndarray:
    """Upper profile ``H = t / (t^{1/2s} + |x|)^{N+2s}``."""
    return t / (t ** (1 / (2 * s)) + np.asarray(r)) ** (N + 2 * s)


def kernel_profile_rhs(
    dx: np.ndarray, dy: np.ndarray, r: np.ndarray, t: float | np.ndarray, N: int, s: float
) -> np.ndarray:
    """Two-sided heat-kernel profile on pairs with boundary distances dx, dy."""
    st = np.sqrt(t)
    with np.errstate(divide="ignore"):
        bulk = np.minimum(t ** (-N / (2 * s)), t / np.asarray(r, dtype=float) ** (N + 2 * s))
    return np.minimum(1, dx**s / st) * np.minimum(1, dy**s / st) * bulk


def green_profile_rhs(dx: np.ndarray, dy: np.ndarray, r: np.ndarray, N: int, s: float) -> np.ndarray:
    """Two-sided Green-function profile; needs N > 2s."""
    return (
        r ** (2 * s - N)
        * np.minimum(dx**s / r**s, 1.0)
        * np.minimum(dy**s / r**s, 1.0)
    )


@dataclass(frozen=True, eq=False)
class ComparisonProfile:
    """Sampled values against a reference profile, with fitted constants.

    ``c_low = min(value/rhs)`` and ``c_high = max(value/rhs)``, so
    ``c_low rhs <= value <= c_high rhs`` on every sample.
    """

    t: np.ndarray
    x_index: np.ndarray
    y_index: np.ndarray
    value: np.ndarray
    rhs: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.value / self.rhs

    @property
    def c_low(self) -> float:
        return float(self.ratio.min())

    @property
    def c_high(self) -> float:
        return float(self.ratio.max())

    @property
    def spread(self) -> float:
        """``c_high / c_low``."""
        return self.c_high / self.c_low

    def rows(self) -> list[tuple]:
        return [
            (float(t), int(i), int(j), float(v), float(r), float(v / r))
            for t, i, j, v, r in zip(self.t, self.x_index, self.y_index, self.value, self.rhs)
        ]


def _eligible(grid: DomainGrid) -> np.ndarray:
    return np.flatnonzero(grid.delta >= 2 * grid.h)


def _sample_pairs(grid: DomainGrid, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    ok = _eligible(grid)
    if ok.size < 2 or count < 1:
        raise InsufficientSamples(f"{ok.size} nodes with delta >= 2h, {count} pairs requested")
    rng = np.random.default_rng(seed)
    pick = rng.choice(ok, size=(count, 2))
    return pick[:, 0], pick[:, 1]


def validate_kernel_bounds(
    K: KernelBundle, times: Sequence[float], sample_pairs: int, seed: int = 0
) -> ComparisonProfile:
    """Fit the two-sided heat-kernel estimate on random node pairs.

    Only nodes with ``delta >= 2h`` are sampled; the same pairs are reused
    for every time.
    """
    g, s, N = K.grid, K.operator.params.s, K.grid.dimension
    tmax = g.diameter ** (2 * s)
    for t in times:
        if not t > 0:
            raise NonPositiveTime(f"t must be positive, got {t}")
        if t > tmax:
            raise ValueError(f"t={t} exceeds diam^(2s)={tmax:.3g}")
    i, j = _sample_pairs(g, sample_pairs, seed)
    r = np.linalg.norm(g.nodes[i] - g.nodes[j], axis=1)
    V = K.vectors
    cols = []
    for t in times:
        P = ((V[i] * np.exp(-K.mu * t)) * V[j]).sum(axis=1) / g.cell_volume
        rhs = kernel_profile_rhs(g.delta[i], g.delta[j], r, t, N, s)
        cols.append((np.full(i.size, float(t)), P, rhs))
    t_all, P_all, rhs_all = (np.concatenate(c) for c in zip(*cols))
    reps = len(times)
    return ComparisonProfile(t_all, np.tile(i, reps), np.tile(j, reps), P_all, rhs_all)


@dataclass(frozen=True)
class GradientBoundReport:
    times: tuple[float, ...]
    constants: tuple[float, ...]

    @property
    def constant(self) -> float:
        """Smallest C valid for every sampled time."""
        return max(self.constants)


def kernel_gradient_bound(
    K: KernelBundle, times: Sequence[float], columns: int = 64, seed: int = 0
) -> GradientBoundReport:
    """Smallest C with ``|grad_x P| <= C P / (delta(x) ^ t^{1/2s})`` on sampled data.

    ``columns`` source points y are drawn among nodes with ``delta >= 2h``;
    x ranges over the same eligible set.
    """
    g, s = K.grid, K.operator.params.s
    ok = _eligible(g)
    if ok.size < 2:
        raise InsufficientSamples("no nodes with delta >= 2h")
    rng = np.random.default_rng(seed)
    ys = rng.choice(ok, size=min(columns, ok.size), replace=False)
    V = K.vectors
    consts = []
    for t in times:
        if not t > 0:
            raise NonPositiveTime(f"t must be positive, got {t}")
        P = (V * np.exp(-K.mu * t)) @ V[ys].T / g.cell_volume  # (n, cols)
        grad = np.linalg.norm(g.gradient(P.T), axis=-1).T  # (n, cols)
        scale = np.minimum(g.delta, t ** (1 / (2 * s)))[:, None]
        ratio = grad[ok] * scale[ok] / P[ok]
        consts.append(float(ratio.max()))
    return GradientBoundReport(tuple(float(t) for t in times), tuple(consts))


def green_function(K: KernelBundle) -> np.ndarray:
    """Green density ``G = V diag(1/mu) V^T / h^N``; ``u = G f h^N`` solves ``Au = f``."""
    if not K.complete:
        raise SingularOperator("Green function needs the complete spectrum")
    if K.mu[0] <= 0:
        raise SingularOperator("operator is not positive definite")
    V = K.vectors
    G = (V / K.mu) @ V.T / K.grid.cell_volume
    return 0.5 * (G + G.T)


def time_integrated_kernel(K: KernelBundle, T: float) -> np.ndarray:
    """``int_0^T P dt`` as a density (tends to G as T grows)."""
    V = K.vectors
    w = -np.expm1(-K.mu * T) / K.mu
    return (V * w) @ V.T / K.grid.cell_volume


def validate_green_bounds(
    G: np.ndarray, grid: DomainGrid, params: FracParams, sample_pairs: int = 20000, seed: int = 0
) -> ComparisonProfile:
    """Fit the two-sided Green-function estimate on pairs with |x-y| >= 2h."""
    N, s = grid.dimension, params.s
    if N <= 2 * s:
        raise DimensionTooSmall(f"N={N} <= 2s={2 * s}")
    i, j = _sample_pairs(grid, sample_pairs, seed)
    r = np.linalg.norm(grid.nodes[i] - grid.nodes[j], axis=1)
    keep = r >= 2 * grid.h
    i, j, r = i[keep], j[keep], r[keep]
    if i.size == 0:
        raise InsufficientSamples("no pairs with |x-y| >= 2h")
    rhs = green_profile_rhs(grid.delta[i], grid.delta[j], r, N, s)
    return ComparisonProfile(np.full(i.size, np.nan), i, j, G[i, j], rhs)


def mass_bound_constant(K: KernelBundle, T: float) -> float:
    """Smallest C with ``int_0^T int_Omega P(x,y,t) dy dt <= C delta^s(x)`` (delta >= 2h)."""
    g, s = K.grid, K.operator.params.s
    V = K.vectors
    w = -np.expm1(-K.mu * T) / K.mu
    mass = V @ (w * (V.T @ np.ones(g.node_count)))
    ok = _eligible(g)
    return float((mass[ok] / g.delta[ok] ** s).max())


@dataclass(frozen=True)
class DecayFit:
    slope: float
    residual: float


def long_time_decay(K: KernelBundle, node: int, times: Sequence[float]) -> DecayFit:
    """Linear fit of ``log P(x,x,t)`` in t; the slope should approach ``-lambda1``.

    ``residual`` is the relative RMS deviation of the fitted line.
    """
    t = np.asarray(times, dtype=float)
    if np.any(t <= 0):
        raise NonPositiveTime("times must be positive")
    V = K.vectors
    diag = (np.exp(-np.outer(t, K.mu)) * V[node] ** 2).sum(axis=1) / K.grid.cell_volume
    y = np.log(diag)
    slope, icpt = np.polyfit(t, y, 1)
    fit = slope * t + icpt
    return DecayFit(float(slope), float(np.sqrt(np.mean((fit - y) ** 2)) / np.abs(y).mean()))

