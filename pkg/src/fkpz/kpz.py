"""Nonlinear problem ``u_t + A u = |grad u|^alpha + f``.

Solvers: damped Picard iteration on the Duhamel map with norm-ball control,
IMEX stepping (optionally with a bounded regularized nonlinearity), the
monotone approximation scheme, the linear drift problem, comparison runs
and the blow-up monitor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diagnostics import NormSpec, norm
from .errors import CflViolation, Diverged, MaxIterExceeded, MonotonicityViolation
from .fraclap import OperatorMatrix
from .grid import DomainGrid, SpaceTimeField
from .heatkernel import KernelBundle
from .linsolve import ImplicitStepper, LinearProblem, duhamel_step_weights, time_grid

# -- thresholds ------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    """Critical values of alpha for given (N, s)."""

    N: int
    s: float

    @property
    def subcritical(self) -> float:
        """``(N+2s)/(N+1)``: existence for L^1 data below this."""
        return (self.N + 2 * self.s) / (self.N + 1)

    @property
    def weighted(self) -> float:
        """``s/(1-s)``: upper end of the weighted existence range."""
        return self.s / (1 - self.s)

    @property
    def nonexistence(self) -> float:
        """``1/(1-s)``: no solution with grad u in L^alpha above this."""
        return 1 / (1 - self.s)

    @property
    def uniqueness(self) -> float:
        """Upper end of the uniqueness window for the minimal solution."""
        N, s = self.N, self.s
        return ((N + 2 * s) ** 2 + 2 * s * (N + 1)) / ((N + 1) * (N + 4 * s))

    def classify(self, alpha: float) -> str:
        if alpha < self.subcritical:
            return "subcritical-L1"
        if alpha < self.weighted:
            return "intermediate"
        if alpha <= self.nonexistence:
            return "open-gap"
        return "nonexistence"


def hhh_conditions(alpha: float, N: int, s: float, m: float) -> bool:
    """Whether (alpha, m) lies in the global-gradient existence regime (u0 = 0, f in L^m)."""
    if not (2 * s - 1) / (1 - s) > (N + 2 * s) ** 2 / (N + 1):
        return False
    if not (N + 2 * s) / (N + 1) <= alpha < (2 * s - 1) / ((1 - s) * (N + 2 * s)):
        return False
    if m < 1 / s:
        return False
    if m >= (N + 2 * s) / (2 * s - 1):
        return True
    conj = alpha / (alpha - 1)
    lower = (N + 2 * s) / conj / ((2 * s - 1) - (1 - s) * (N + 2 * s))
    return lower < m < (N + 2 * s) / (2 * s - 1)


def fix001_conditions(alpha: float, N: int, s: float, m: float) -> bool:
    """Whether (alpha, m) lies in the weighted existence regime."""
    if not (N + 2 * s) / (N + 1) <= alpha < s / (1 - s):
        return False
    return m > max((N + 2 * s) / (s * (2 * s - 1)), (N + 2 * s) / (s - alpha * (1 - s)))


def hhh2_conditions(alpha: float, N: int, s: float, sigma: float) -> bool:
    """Whether (alpha, sigma) lies in the existence regime with f = 0 and u0 in L^sigma."""
    if not (2 * s - 1) / (1 - s) > (N + 2 * s) ** 2 / N:
        return False
    if not (N + 2 * s) / (N + 1) <= alpha < 2 * s / ((1 - s) * (N + 2 * s) + 1):
        return False
    denom = (2 * s - alpha) - alpha * (1 - s) * (N + 2 * s)
    return denom > 0 and sigma > (alpha - 1) * N / denom


def blowup_window(alpha: float, s: float) -> bool:
    """``s > (sqrt5 - 1)/2`` and ``1 + s < alpha < s/(1-s)``."""
    return s > (np.sqrt(5) - 1) / 2 and 1 + s < alpha < s / (1 - s)


# -- problem -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KpzProblem:
    """Nonlinear problem on top of a linear backbone.

    Attributes:
        linear: operator, data (f, u0), horizon and data class m.
        alpha: gradient power, > 1.
        weighted: track the weighted norms of the weighted existence theory.
    """

    linear: LinearProblem
    alpha: float
    weighted: bool = False

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")

    @property
    def grid(self) -> DomainGrid:
        return self.linear.grid

    @property
    def operator(self) -> OperatorMatrix:
        return self.linear.operator

    @property
    def kernel(self) -> KernelBundle:
        return self.linear.kernel

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.grid.dimension, self.linear.params.s)

    @property
    def regime(self) -> str:
        return self.thresholds.classify(self.alpha)


def _power_gradient(grid: DomainGrid, u: np.ndarray, alpha: float) -> np.ndarray:
    return grid.grad_norm(u) ** alpha


# -- Picard --------------------------------------------------------------------------


@dataclass
class FixedPointState:
    """Progress of a Picard run; owned by a single solve.

    ``radius`` is the ball radius ``l^{1/alpha}`` in the E_r norm
    ``||grad v||_{L^r(Omega_T)}``.
    """

    n: int
    v: SpaceTimeField
    r: float
    l: float
    horizon: float
    radius: float
    residuals: list = field(default_factory=list)
    ball_norms: list = field(default_factory=list)
    weighted_norms: list = field(default_factory=list)
    converged: bool = False

    @property
    def contained(self) -> bool:
        return all(b <= self.radius * (1 + 1e-12) for b in self.ball_norms)

    def rows(self) -> list[tuple]:
        return [
            (i + 1, float(r), float(b))
            for i, (r, b) in enumerate(zip(self.residuals, self.ball_norms))
        ]


def duhamel_map(P: KpzProblem, times: np.ndarray, v: np.ndarray | None) -> np.ndarray:
    """Duhamel solution with source ``|grad v|^alpha + f`` frozen at interval midpoints.

    ``v`` has shape (levels, n); ``None`` means v = 0.
    """
    K = P.kernel
    g = P.grid
    lin = P.linear
    mids = 0.5 * (times[:-1] + times[1:])
    src = np.array([lin.source_at(t) for t in mids])
    if v is not None:
        vm = 0.5 * (v[:-1] + v[1:])
        src = src + _power_gradient(g, vm, P.alpha)
    sc = src @ K.vectors
    c = K.coefficients(lin.u0)
    coeffs = np.empty((times.size, c.size))
    coeffs[0] = c
    for j in range(times.size - 1):
        prop, wgt = duhamel_step_weights(K.mu, times[j + 1] - times[j])
        c = prop * c + wgt * sc[j]
        coeffs[j + 1] = c
    return coeffs @ K.vectors.T


def _sup_l1(grid: DomainGrid, d: np.ndarray) -> float:
    return float(np.abs(d).sum(axis=1).max() * grid.cell_volume)


def _er_norm(grid: DomainGrid, times: np.ndarray, u: np.ndarray, r: float) -> float:
    return norm(SpaceTimeField(grid, times, u), NormSpec("bochner", r))


def default_ball_exponent(P: KpzProblem) -> float:
    """Midpoint of ``(alpha, (N+2s)/(N+1))``; falls back to alpha when empty."""
    top = P.thresholds.subcritical
    return 0.5 * (P.alpha + top) if P.alpha < top else P.alpha


def picard_solve(
    P: KpzProblem,
    tol: float,
    max_iter: int,
    steps: int = 64,
    omega: float = 0.5,
    r: float | None = None,
    ball_factor: float = 2.0,
    max_halvings: int = 8,
) -> tuple[SpaceTimeField, FixedPointState]:
    """Damped Picard iteration ``u <- (1-omega) u + omega K(u)``.

    The ball ``{||grad v||_{L^r(Omega_T)} <= R}`` has ``R = ball_factor *
    ||K(0)||``; the horizon is halved until the map sends a boundary probe
    of the ball back inside.  Converges when the sup-in-time L^1 change
    drops below ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    g = P.grid
    r = default_ball_exponent(P) if r is None else r
    T = P.linear.T
    for _ in range(max_halvings + 1):
        times = np.linspace(0.0, T, steps + 1)
        k0 = duhamel_map(P, times, None)
        n0 = _er_norm(g, times, k0, r)
        R = ball_factor * n0
        if n0 == 0.0:
            break
        probe = duhamel_map(P, times, k0 * (R / n0))
        if _er_norm(g, times, probe, r) <= R:
            break
        T /= 2
    state = FixedPointState(0, SpaceTimeField(g, times, k0), r, R**P.alpha, T, R)
    u = k0
    for n in range(1, max_iter + 1):
        new = (1 - omega) * u + omega * duhamel_map(P, times, u)
        res = _sup_l1(g, new - u)
        u = new
        state.n = n
        state.residuals.append(res)
        state.ball_norms.append(_er_norm(g, times, u, r))
        if P.weighted and np.isfinite(P.linear.m):
            w = u * g.delta ** (1 - P.linear.params.s)
            state.weighted_norms.append(_er_norm(g, times, w, P.linear.m * P.alpha))
        if not np.all(np.isfinite(u)):
            state.v = SpaceTimeField(g, times, np.nan_to_num(u))
            raise Diverged("iterate is not finite", state)
        state.v = SpaceTimeField(g, times, u, {"solver": "picard"})
        if res < tol:
            state.converged = True
            return state.v, state
        hist = state.residuals
        if len(hist) >= 4 and all(
            hist[-k] > 10 * hist[0] and hist[-k] > hist[-k - 1] for k in (1, 2, 3)
        ):
            raise Diverged(f"residual grew to {res:.3e}", state)
    raise MaxIterExceeded(f"no convergence in {max_iter} iterations", state)


def fixed_point_residual(P: KpzProblem, u: SpaceTimeField) -> float:
    """Sup-in-time L^1 distance between u and its Duhamel image."""
    return _sup_l1(P.grid, duhamel_map(P, u.times, u.values) - u.values)


# -- IMEX family ----------------------------------------------------------------------


Nonlinearity = Callable[[np.ndarray], np.ndarray]


def imex_run(
    lin: LinearProblem,
    dt: float,
    nonlinearity: Nonlinearity | None,
    u0: np.ndarray | None = None,
    source: Callable[[float], np.ndarray] | None = None,
    y_cap: tuple[np.ndarray, float] | None = None,
) -> SpaceTimeField:
    """``(I + dt A) u^{n+1} = u^n + dt (N(u^n) + f(t_n))``.

    ``nonlinearity`` maps nodal values to the explicit term.  With
    ``y_cap = (phi, cap)`` the run stops once ``<u, phi> h^N`` exceeds cap
    or u stops being finite; the trajectory is truncated and flagged.
    """
    t = time_grid(lin.T, dt)
    step = ImplicitStepper(lin.operator, t[1] - t[0])
    src = source or lin.source_at
    g = lin.grid
    out = [lin.u0 if u0 is None else np.asarray(u0, dtype=float)]
    meta = {"solver": "imex", "stopped": False}
    for j in range(t.size - 1):
        u = out[-1]
        rhs = u + step.dt * src(t[j])
        if nonlinearity is not None:
            rhs = rhs + step.dt * nonlinearity(u)
        new = step.solve(rhs) if np.all(np.isfinite(rhs)) else np.full_like(u, np.inf)
        if y_cap is not None:
            phi, cap = y_cap
            if not np.all(np.isfinite(new)) or float(new @ phi) * g.cell_volume > cap:
                meta.update(stopped=True, stop_time=float(t[j + 1]))
                if np.all(np.isfinite(new)):
                    out.append(new)
                break
        out.append(new)
    return SpaceTimeField(g, t[: len(out)], np.array(out), meta)


def solve_kpz_imex(P: KpzProblem, dt: float, y_cap: float | None = None) -> SpaceTimeField:
    """IMEX for the full problem, gradient term explicit."""
    cap = None if y_cap is None else (P.kernel.phi1, y_cap)
    return imex_run(P.linear, dt, lambda u: _power_gradient(P.grid, u, P.alpha), y_cap=cap)


def regularized_nonlinearity(grid: DomainGrid, alpha: float, a: float) -> Nonlinearity:
    """``rho^alpha / (a + rho^alpha)`` with ``rho = |grad u|``; values in [0, 1)."""
    if not a > 0:
        raise ValueError("a must be positive")

    def term(u: np.ndarray) -> np.ndarray:
        p = _power_gradient(grid, u, alpha)
        return p / (a + p)

    return term


def truncated_power(grid: DomainGrid, alpha: float, n: float) -> Nonlinearity:
    """``rho^alpha / (1 + rho^alpha / n)``: increasing in n, tends to ``rho^alpha``."""

    def term(u: np.ndarray) -> np.ndarray:
        p = _power_gradient(grid, u, alpha)
        return p / (1.0 + p / n)

    return term


def regularized_solve(P: KpzProblem, a: float, dt: float) -> SpaceTimeField:
    """IMEX solution of the bounded-nonlinearity problem with parameter a."""
    return imex_run(P.linear, dt, regularized_nonlinearity(P.grid, P.alpha, a))


@dataclass(frozen=True)
class MonotoneResult:
    ns: tuple[int, ...]
    solutions: tuple[SpaceTimeField, ...]
    gaps: tuple[float, ...]
    max_violation: float
    tolerance: float
    minimal_candidate: bool

    @property
    def solution(self) -> SpaceTimeField:
        return self.solutions[-1]


def monotone_limit_solve(
    P: KpzProblem, ns: Sequence[int], dt: float, gap_tol: float = 1e-3
) -> MonotoneResult:
    """Approximations with nonlinearity ``rho^alpha/(1 + rho^alpha/n)``, ``f_n = T_n(f)``
    and ``u0_n = T_n(u0)`` for increasing n.

    Audits ``u_n <= u_{n+1}`` nodewise with tolerance ``10 dt h`` and
    declares a minimal-solution candidate when the last relative L^1(Omega_T)
    gap falls below ``gap_tol``.
    """
    ns = [int(n) for n in ns]
    if len(ns) < 1 or any(b <= a for a, b in zip(ns[:-1], ns[1:])):
        raise ValueError("n-sequence must be increasing")
    lin, g = P.linear, P.grid
    sols = []
    for n in ns:
        src = (lambda t, n=n: np.clip(lin.source_at(t), -n, n))
        sols.append(
            imex_run(lin, dt, truncated_power(g, P.alpha, n), np.clip(lin.u0, -n, n), src)
        )
    tol = 10 * (sols[0].times[1] - sols[0].times[0]) * g.h
    worst, gaps = 0.0, []
    l1 = NormSpec("lebesgue", 1)
    for lo, hi in zip(sols[:-1], sols[1:]):
        worst = max(worst, float((lo.values - hi.values).max()))
        diff = SpaceTimeField(g, lo.times, hi.values - lo.values)
        gaps.append(norm(diff, l1) / max(norm(hi, l1), 1e-300))
    if worst > tol:
        raise MonotonicityViolation(f"u_n exceeds u_(n+1) by {worst:.3e} > {tol:.3e}")
    cand = bool(gaps) and gaps[-1] < gap_tol
    return MonotoneResult(tuple(ns), tuple(sols), tuple(gaps), worst, tol, cand)


# -- drift ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DriftProblem:
    """``u_t + A u = <B, grad u> + f``.

    Attributes:
        linear: operator, f, u0 and horizon.
        B: drift per node, shape (n, N), or a callable ``t -> (n, N)``.
        m: integrability tag of B.
    """

    linear: LinearProblem
    B: np.ndarray | Callable[[float], np.ndarray]
    m: float = np.inf

    @property
    def uniqueness_regime(self) -> bool:
        N, s = self.linear.grid.dimension, self.linear.params.s
        return self.m > (N + 2 * s) / (2 * s - 1)

    def drift_at(self, t: float) -> np.ndarray:
        B = self.B(t) if callable(self.B) else self.B
        return np.asarray(B, dtype=float).reshape(self.linear.grid.node_count, -1)


def _cfl(D: DriftProblem, times: np.ndarray) -> float:
    h = D.linear.grid.h
    bmax = max(float(np.linalg.norm(D.drift_at(t), axis=1).max()) for t in times[:-1])
    dt = times[1] - times[0]
    if bmax > 0 and dt > h / (2 * bmax):
        raise CflViolation(f"dt={dt:.3g} exceeds h/(2 max|B|)={h / (2 * bmax):.3g}")
    return bmax


def drift_solve(D: DriftProblem, dt: float) -> SpaceTimeField:
    """IMEX with upwinded explicit drift; positivity is exact under the CFL bound."""
    lin = D.linear
    t = time_grid(lin.T, dt)
    _cfl(D, t)
    g = lin.grid
    step = ImplicitStepper(lin.operator, t[1] - t[0])
    out = np.empty((t.size, g.node_count))
    out[0] = lin.u0
    for j in range(t.size - 1):
        B = D.drift_at(t[j])
        rhs = out[j] + step.dt * lin.source_at(t[j])
        if np.any(B):
            rhs = rhs + step.dt * g.upwind_drift(out[j], B)
        out[j + 1] = step.solve(rhs)
    return SpaceTimeField(g, t, out, {"solver": "drift-imex"})


def drift_picard(
    D: DriftProblem, dt: float, init: np.ndarray, tol: float, max_iter: int = 200
) -> tuple[SpaceTimeField, list[float]]:
    """Fixed-point form ``u = S(<B, grad v> + f)`` iterated from trajectory ``init``.

    S is the linear IMEX solve with the drift term supplied as a source.
    """
    lin = D.linear
    t = time_grid(lin.T, dt)
    _cfl(D, t)
    g = lin.grid
    step = ImplicitStepper(lin.operator, t[1] - t[0])
    v = np.array(init, dtype=float)
    if v.shape != (t.size, g.node_count):
        raise ValueError("initial trajectory does not match the time grid")
    hist = []
    for _ in range(max_iter):
        u = np.empty_like(v)
        u[0] = lin.u0
        for j in range(t.size - 1):
            drift = g.upwind_drift(v[j], D.drift_at(t[j]))
            u[j + 1] = step.solve(u[j] + step.dt * (lin.source_at(t[j]) + drift))
        res = _sup_l1(g, u - v)
        hist.append(res)
        v = u
        if res < tol:
            return SpaceTimeField(g, t, v, {"solver": "drift-picard"}), hist
        if not np.isfinite(res):
            break
    state = FixedPointState(
        len(hist), SpaceTimeField(g, t, np.nan_to_num(v)), np.nan, np.nan, lin.T, np.inf, hist
    )
    raise MaxIterExceeded(f"drift Picard did not reach tol {tol}", state)


# -- comparison ------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    dt: float
    max_violation: float
    w1: SpaceTimeField
    w2: SpaceTimeField


def comparison_experiment(
    P: KpzProblem,
    data1: tuple[object, np.ndarray],
    data2: tuple[object, np.ndarray],
    dt: float,
    a: float = 1.0,
) -> ComparisonReport:
    """Solve the regularized problem for two ordered data sets ``(f, u0)``.

    Returns the largest positive value of ``w1 - w2`` over all nodes and steps.
    """
    lin = P.linear
    term = regularized_nonlinearity(P.grid, P.alpha, a)
    runs = []
    for f, u0 in (data1, data2):
        runs.append(imex_run(lin.with_source(f, u0), dt, term))
    w1, w2 = runs
    viol = max(0.0, float((w1.values - w2.values).max()))
    return ComparisonReport(float(w1.times[1] - w1.times[0]), viol, w1, w2)


# -- blow-up -----------------------------------------------------------------------------


@dataclass(frozen=True)
class BlowupReport:
    times: np.ndarray
    Y: np.ndarray
    residual: np.ndarray
    c_hat: float
    threshold: float
    blowup: bool
    crossing_time: float | None

    def rows(self) -> list[tuple]:
        return [(float(t), float(y), float(r)) for t, y, r in zip(self.times, self.Y, self.residual)]


def blowup_monitor(
    u: SpaceTimeField,
    K: KernelBundle,
    alpha: float,
    source: Callable[[float], np.ndarray] | None = None,
    t0_index: int = 0,
    gradient_term: bool = True,
) -> BlowupReport:
    """Track ``Y(t) = <u, phi1> h^N`` against ``Y' + lambda1 Y >= C Y^alpha``.

    ``C`` is fitted once at ``t0`` as ``<|grad u|^alpha, phi1> / Y^alpha``;
    the convexity threshold is ``(lambda1 / C)^{1/(alpha-1)}``.  Blow-up is
    flagged when Y passes the threshold and then doubles (or the run was
    stopped for non-finite growth) within the horizon.  ``residual`` is the
    pointwise ODE defect ``Y' + lambda1 Y - <|grad u|^alpha + f, phi1>``.
    """
    g = u.grid
    phi = K.phi1
    vol = g.cell_volume
    Y = u.values @ phi * vol
    f = np.zeros((len(u), g.node_count))
    if source is not None:
        f = np.array([source(t) for t in u.times])
    forcing = f @ phi * vol
    if gradient_term:
        grad_term = _power_gradient(g, u.values, alpha) @ phi * vol
    else:
        grad_term = np.zeros(len(u))
    if len(u) >= 3:
        dY = np.gradient(Y, u.times)
    else:
        dY = np.zeros(len(u))
    residual = dY + K.lambda1 * Y - grad_term - forcing
    y0 = Y[t0_index]
    c_hat = float(grad_term[t0_index] / y0**alpha) if y0 > 0 and gradient_term else 0.0
    threshold = (K.lambda1 / c_hat) ** (1 / (alpha - 1)) if c_hat > 0 else np.inf
    blow, crossing = False, None
    above = np.flatnonzero(Y > threshold)
    if above.size:
        j = int(above[0])
        crossing = float(u.times[j])
        if np.any(Y[j:] >= 2 * Y[j]) or u.meta.get("stopped", False):
            blow = True
    return BlowupReport(u.times, Y, residual, c_hat, float(threshold), blow, crossing)


# -- refinement divergence --------------------------------------------------------------------


@dataclass(frozen=True)
class RefinementStudy:
    hs: tuple[float, ...]
    norms: tuple[float, ...]

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(b / a for a, b in zip(self.norms[:-1], self.norms[1:]))


def stationary_source_gradient_norms(
    bundles: Sequence[KernelBundle], q: float, T: float, levels: int = 40, f: float = 1.0
) -> RefinementStudy:
    """``||grad u||_{L^q(Omega_T)}`` for ``u_t + A u = f``, u0 = 0, on several grids.

    Time evolution is exact in the eigenbasis.
    """
    norms, hs = [], []
    for K in bundles:
        g = K.grid
        times = np.linspace(0.0, T, levels + 1)
        c = K.coefficients(np.full(g.node_count, f))
        w = -np.expm1(-np.outer(times, K.mu)) / K.mu
        u = (w * c) @ K.vectors.T
        norms.append(norm(SpaceTimeField(g, times, u), NormSpec("bochner", q)))
        hs.append(g.h)
    return RefinementStudy(tuple(hs), tuple(norms))
