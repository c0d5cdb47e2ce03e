"""Linear problem ``u_t + A u = f``, ``u(0) = u0``: Duhamel and IMEX solvers,
decay and regularity measurements, truncation and the discrete Kato check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.linalg

from .diagnostics import NormSpec, fit_loglog, norm
from .errors import (
    ExponentOutOfRange,
    LinearSolveFailure,
    NonConvexPhi,
    NonPositiveK,
    TimeGridTooCoarse,
    WeightOutOfRange,
    WindowTooNarrow,
)
from .fraclap import OperatorMatrix
from .grid import DomainGrid, Field, SpaceTimeField
from .heatkernel import KernelBundle, eigendecompose

MIN_DUHAMEL_STEPS = 16
GUARD = 0.01

Source = Union[None, float, np.ndarray, Field, SpaceTimeField, Callable[[float], np.ndarray]]


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """Data for the linear problem on a fixed grid.

    Attributes:
        operator: the assembled fractional Laplacian.
        u0: initial values (nodal array or Field).
        T: horizon.
        source: ``None`` (zero), a constant, a nodal array/Field (stationary),
            a callable ``t -> values`` or a SpaceTimeField (piecewise linear
            in time).
        m, rho: integrability classes of f and u0 (used for admissibility).
        beta: weight exponent when f is only in L^1 with weight delta^beta.
        bundle: optional precomputed eigendecomposition.
    """

    operator: OperatorMatrix
    u0: np.ndarray | Field
    T: float
    source: Source = None
    m: float = 1.0
    rho: float = 1.0
    beta: float | None = None
    bundle: KernelBundle | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.m < 1 or self.rho < 1:
            raise ValueError("m and rho must be >= 1")
        if self.beta is not None and not self.beta < 2 * self.params.s - 1:
            raise WeightOutOfRange(f"beta={self.beta} must be < 2s-1={2 * self.params.s - 1}")
        u0 = self.u0.values if isinstance(self.u0, Field) else np.asarray(self.u0, dtype=float)
        if u0.shape != (self.grid.node_count,):
            raise ValueError("u0 does not match the grid")
        object.__setattr__(self, "u0", u0)

    @property
    def grid(self) -> DomainGrid:
        return self.operator.grid

    @property
    def params(self):
        return self.operator.params

    @cached_property
    def kernel(self) -> KernelBundle:
        return self.bundle if self.bundle is not None else eigendecompose(self.operator)

    def source_at(self, t: float) -> np.ndarray:
        n = self.grid.node_count
        f = self.source
        if f is None:
            return np.zeros(n)
        if isinstance(f, SpaceTimeField):
            return np.array([np.interp(t, f.times, col) for col in f.values.T])
        if isinstance(f, Field):
            return np.array(f.values)
        if callable(f):
            return np.broadcast_to(np.asarray(f(t), dtype=float), (n,)).copy()
        return np.broadcast_to(np.asarray(f, dtype=float), (n,)).copy()

    def with_source(self, source: Source, u0=None) -> "LinearProblem":
        return LinearProblem(
            self.operator,
            self.u0 if u0 is None else u0,
            self.T,
            source,
            self.m,
            self.rho,
            self.beta,
            self.bundle if self.bundle is not None else self.__dict__.get("kernel"),
        )


def _check_times(times: Sequence[float], T: float) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")
    if t[-1] > T * (1 + 1e-12):
        raise ValueError("time grid exceeds the horizon")
    return t


def duhamel_step_weights(mu: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagator ``e^{-mu dt}`` and exact source weight ``(1 - e^{-mu dt})/mu``."""
    return np.exp(-mu * dt), -np.expm1(-mu * dt) / mu


def solve_duhamel(P: LinearProblem, times: Sequence[float]) -> SpaceTimeField:
    """Representation formula on ``times``.

    The source is frozen at each interval midpoint and integrated against
    the kernel exactly, so stationary sources and f = 0 are reproduced to
    spectral precision.
    """
    t = _check_times(times, P.T)
    if t.size - 1 < MIN_DUHAMEL_STEPS:
        raise TimeGridTooCoarse(f"{t.size - 1} intervals < {MIN_DUHAMEL_STEPS}")
    K = P.kernel
    c = K.coefficients(P.u0)
    out = np.empty((t.size, P.grid.node_count))
    out[0] = P.u0
    for j in range(t.size - 1):
        dt = t[j + 1] - t[j]
        prop, wgt = duhamel_step_weights(K.mu, dt)
        fmid = P.source_at(0.5 * (t[j] + t[j + 1]))
        c = prop * c + wgt * K.coefficients(fmid)
        out[j + 1] = K.synthesize(c)
    return SpaceTimeField(P.grid, t, out, {"solver": "duhamel"})


class ImplicitStepper:
    """Cholesky factor of ``I + dt A`` reused across steps."""

    def __init__(self, A: OperatorMatrix, dt: float):
        n = A.node_count
        try:
            self._factor = scipy.linalg.cho_factor(np.eye(n) + dt * A.dense)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailure(str(exc)) from exc
        self.dt = dt

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = scipy.linalg.cho_solve(self._factor, rhs)
        if not np.all(np.isfinite(out)):
            raise LinearSolveFailure("non-finite solution")
        return out


def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid on [0, T] with step as close to ``dt`` as divides T."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    steps = max(1, int(round(T / dt)))
    return np.linspace(0.0, T, steps + 1)


def solve_imex(P: LinearProblem, dt: float) -> SpaceTimeField:
    """Backward Euler in A, explicit source: ``(I + dt A) u^{n+1} = u^n + dt f(t_n)``."""
    t = time_grid(P.T, dt)
    step = ImplicitStepper(P.operator, t[1] - t[0])
    out = np.empty((t.size, P.grid.node_count))
    out[0] = P.u0
    for j in range(t.size - 1):
        out[j + 1] = step.solve(out[j] + step.dt * P.source_at(t[j]))
    return SpaceTimeField(P.grid, t, out, {"solver": "imex"})


# -- decay --------------------------------------------------------------------


@dataclass(frozen=True)
class DecayStudy:
    rho: float
    r: float
    times: np.ndarray
    norms: np.ndarray
    slope: float
    predicted: float

    @property
    def rel_error(self) -> float:
        if self.predicted == 0:
            return abs(self.slope)
        return abs(self.slope - self.predicted) / abs(self.predicted)


def predicted_decay(N: int, s: float, rho: float, r: float) -> float:
    """Smoothing exponent ``-(N/2s)(1/rho - 1/r)``."""
    return -(N / (2 * s)) * (1 / rho - (0.0 if np.isinf(r) else 1 / r))


def near_delta(grid: DomainGrid) -> np.ndarray:
    """Unit-mass spike at the node closest to the origin."""
    u = np.zeros(grid.node_count)
    u[np.argmin(np.linalg.norm(grid.nodes, axis=1))] = 1.0 / grid.cell_volume
    return u


def decay_study(P: LinearProblem, rho: float, r: float, times: Sequence[float]) -> DecayStudy:
    """Fitted log-log slope of ``||u(t)||_{L^r}`` for the heat flow of u0."""
    if not (1 <= rho <= r):
        raise ValueError("need 1 <= rho <= r")
    t = np.asarray(times, dtype=float)
    if t.size < 4 or t.min() <= 0 or t.max() / t.min() < 1.5:
        raise WindowTooNarrow("need >= 4 positive times spanning a factor >= 1.5")
    traj = P.kernel.evolve(P.u0, t)
    g = P.grid
    spec = NormSpec("lebesgue", r)
    norms = np.array([norm(Field(g, v), spec) for v in traj])
    fit = fit_loglog(t, norms)
    return DecayStudy(rho, r, t, norms, fit.slope, predicted_decay(g.dimension, P.params.s, rho, r))


# -- admissible ranges -------------------------------------------------------


def classify(value: float, bound: float, guard: float = GUARD) -> str:
    """``inside`` if value < bound by more than the guard band, ``outside`` if above it."""
    if np.isinf(bound):
        return "inside"
    if value <= bound * (1 - guard):
        return "inside"
    if value >= bound * (1 + guard):
        return "outside"
    return "borderline"


def _reciprocal_bound(inv: float) -> float:
    return np.inf if inv <= 0 else 1.0 / inv


def gradient_bound(N: int, s: float, beta: float = 0.0) -> float:
    """Upper end of the global gradient range ``q < (N+2s)/(N+beta+1)``."""
    return (N + 2 * s) / (N + beta + 1)


def hardy_bound(m: float, N: int, s: float) -> float:
    """``theta`` must satisfy ``1/theta > 1/m - s/(N+2s)``."""
    return _reciprocal_bound(1 / m - s / (N + 2 * s))


def weighted_gradient_bound(m: float, N: int, s: float) -> float:
    """``p`` must satisfy ``1/p > 1/m - (2s-1)/(N+2s)``."""
    return _reciprocal_bound(1 / m - (2 * s - 1) / (N + 2 * s))


def unweighted_gradient_bound(m: float, N: int, s: float) -> float:
    """Range of ``a`` with ``|grad u| in L^a`` for ``f in L^m``."""
    if m >= (N + 2 * s) / (2 * s - 1):
        return 1 / (1 - s)
    if m >= 1 / s:
        return m * (N + 2 * s) / ((N + 2 * s) * (m * (1 - s) + 1) - m * (2 * s - 1))
    return gradient_bound(N, s)


def fractional_bound(N: int, s: float) -> float:
    """Range of the fractional exponents: ``(N+2s)/(N+s)``."""
    return (N + 2 * s) / (N + s)


@dataclass(frozen=True)
class RegularityReport:
    """Measured norms keyed by ``(quantity, exponent)`` plus admissibility flags.

    Quantities: ``u`` (L^m), ``grad`` (q), ``hardy`` (u/delta^s, theta),
    ``weighted_grad`` (|grad u| delta^{1-s}, p), ``grad_a`` (a, unweighted
    range for f in L^m), ``frac`` ((-Delta)^{s/2} u in L^r), ``gagliardo``
    (W^{s,w} seminorm).
    """

    norms: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        return [
            (name, float(e), float(v), self.flags[(name, e)], float(self.bounds[(name, e)]))
            for (name, e), v in sorted(self.norms.items())
        ]

    def summary(self) -> dict:
        return {
            f"{name}[{e:g}]": {"value": v, "flag": self.flags[(name, e)]}
            for (name, e), v in sorted(self.norms.items())
        }


def regularity_report(
    u: SpaceTimeField, P: LinearProblem, exponent_grid: Mapping[str, Sequence[float]]
) -> RegularityReport:
    """Measure norms of ``u`` for each exponent and flag the admissible range.

    ``exponent_grid`` keys: ``q``, ``theta``, ``p``, ``a``, ``r``, ``w``.
    """
    g = P.grid
    N, s, m = g.dimension, P.params.s, P.m
    beta = P.beta or 0.0
    rep = RegularityReport()

    def put(name, e, value, bound):
        rep.norms[(name, float(e))] = float(value)
        rep.bounds[(name, float(e))] = float(bound)
        rep.flags[(name, float(e))] = classify(e, bound)

    put("u", m, norm(u, NormSpec("lebesgue", m)), np.inf if m > 1 else (N + 2 * s) / N)
    for q in exponent_grid.get("q", ()):
        put("grad", q, norm(u, NormSpec("bochner", q)), gradient_bound(N, s, beta))
    for th in exponent_grid.get("theta", ()):
        put("hardy", th, norm(u, NormSpec("lebesgue", th, weight=-s)), hardy_bound(m, N, s))
    for p in exponent_grid.get("p", ()):
        put("weighted_grad", p, norm(u, NormSpec("bochner", p, weight=1 - s)), weighted_gradient_bound(m, N, s))
    for a in exponent_grid.get("a", ()):
        put("grad_a", a, norm(u, NormSpec("bochner", a)), unweighted_gradient_bound(m, N, s))
    if exponent_grid.get("r"):
        K = P.kernel
        half = K.vectors @ (np.sqrt(K.mu)[:, None] * (K.vectors.T @ u.values.T))
        frac = SpaceTimeField(g, u.times, half.T)
        for r in exponent_grid["r"]:
            put("frac", r, norm(frac, NormSpec("lebesgue", r)), fractional_bound(N, s))
    for w in exponent_grid.get("w", ()):
        put("gagliardo", w, norm(u, NormSpec("gagliardo", w, s=s)), fractional_bound(N, s))
    return rep


def truncate(u: Field, k: float) -> Field:
    """``T_k(u) = max(-k, min(k, u))`` nodewise."""
    if not k > 0:
        raise NonPositiveK(f"k must be positive, got {k}")
    return Field(u.grid, np.clip(u.values, -k, k))


def solve_weighted_data(
    P: LinearProblem, dt: float, q_values: Sequence[float] = ()
) -> tuple[SpaceTimeField, RegularityReport]:
    """IMEX solve for data with ``f delta^beta`` integrable; gradient norms flagged
    against ``q < (N+2s)/(N+beta+1)``."""
    beta = 0.0 if P.beta is None else P.beta
    if not beta < 2 * P.params.s - 1:
        raise WeightOutOfRange(f"beta={beta} must be < 2s-1")
    u = solve_imex(P, dt)
    return u, regularity_report(u, P, {"q": list(q_values)})


@dataclass(frozen=True)
class TimeSliceReport:
    """Per-level comparison of ``||grad u(t)||_q`` with the weighted source history."""

    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    gamma_hat: float
    eta: float

    @property
    def constant(self) -> float:
        """Smallest C with ``lhs <= C rhs`` over levels where rhs > 0."""
        ok = self.rhs > 0
        return float((self.lhs[ok] / self.rhs[ok]).max()) if ok.any() else 0.0


def time_slice_bound(u: SpaceTimeField, P: LinearProblem, q: float, eta: float = 0.05) -> TimeSliceReport:
    """Fixed-time gradient bound against ``int_0^t ||f(s)||_1 (t-s)^{gamma - eta} ds``.

    ``gamma = N/(2s) - q (N+1)/(2s)``; the source is frozen at interval
    midpoints and the kernel ``(t-s)^{gamma-eta}`` is integrated exactly on
    each interval.  Only meaningful for ``u0 = 0`` and ``1 < q < (N+2s)/(N+1)``.
    """
    g = u.grid
    N, s = g.dimension, P.params.s
    if not 1 < q < gradient_bound(N, s):
        raise ExponentOutOfRange(f"q must lie in (1, {gradient_bound(N, s):.4g}), got {q}")
    gamma = N / (2 * s) - q * (N + 1) / (2 * s)
    e = gamma - eta
    if not e > -1:
        raise ExponentOutOfRange(f"gamma - eta = {e:.4g} must exceed -1")
    t = u.times
    mids = 0.5 * (t[:-1] + t[1:])
    mass = np.array([np.abs(P.source_at(m)).sum() * g.cell_volume for m in mids])
    lhs = np.array([norm(u.at(j), NormSpec("bochner", q)) for j in range(len(u))])
    rhs = np.zeros(len(u))
    for j in range(1, len(u)):
        a = (t[j] - t[:j]) ** (e + 1)
        b = (t[j] - t[1 : j + 1]) ** (e + 1)
        rhs[j] = float(np.dot(mass[:j], (a - b) / (e + 1))) ** (1 / q)
    return TimeSliceReport(t, lhs, rhs, float(gamma), float(eta))


# -- Kato inequality -----------------------------------------------------------


def _derivative(phi: Callable, x: np.ndarray) -> np.ndarray:
    eps = 1e-6 * np.maximum(1.0, np.abs(x))
    return (phi(x + eps) - phi(x - eps)) / (2 * eps)


def kato_check(
    u: SpaceTimeField,
    phi: Callable[[np.ndarray], np.ndarray],
    operator: OperatorMatrix,
    dphi: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Largest positive residual of ``v_t + A v <= phi'(u)(u_t + A u)`` for ``v = phi(u)``.

    Backward differences in time with A evaluated at the new level; the
    exterior value of v is ``phi(0)``.  For convex phi this is nonpositive
    up to rounding.
    """
    lo, hi = float(u.values.min()), float(u.values.max())
    pad = max(1e-3, 1e-3 * (hi - lo))
    xs = np.linspace(lo - pad, hi + pad, 65)
    second = np.diff(phi(xs), 2)
    if np.any(second < -1e-9 * max(1.0, np.abs(phi(xs)).max())):
        raise NonConvexPhi("phi has negative second differences on the sampled range")
    dphi = dphi or (lambda x: _derivative(phi, x))
    phi0 = float(phi(np.zeros(1))[0])
    tail = operator.tail
    worst = 0.0
    for j in range(1, len(u)):
        dt = u.times[j] - u.times[j - 1]
        un, uo = u.values[j], u.values[j - 1]
        vn, vo = phi(un), phi(uo)
        lhs = (vn - vo) / dt + operator.matvec(vn) - phi0 * tail
        rhs = dphi(un) * ((un - uo) / dt + operator.matvec(un))
        scale = np.abs(lhs).max() + np.abs(rhs).max() + 1.0
        worst = max(worst, float((lhs - rhs).max()) / scale)
    return max(worst, 0.0)
