"""Norms, seminorms, exponent fits and boundary diagnostics.

Space integrals are nodal (midpoint) sums with weight ``h^N``; time
integrals over a :class:`SpaceTimeField` use the trapezoid rule on its
levels.  Fields are extended by zero outside the domain throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .errors import DegenerateDenominator, EmptyBand, ExponentOutOfRange, InsufficientSamples
from .fraclap import lattice_zeta
from .grid import DomainGrid, Field, SpaceTimeField

NORM_KINDS = ("lebesgue", "bochner", "gagliardo", "weighted")
MIN_R2 = 0.9


@dataclass(frozen=True)
class NormSpec:
    """What to measure.

    Attributes:
        kind: ``lebesgue`` (u in L^p), ``bochner`` (grad u in L^p, i.e. the
            L^p(0,T; W^{1,p}_0) seminorm), ``gagliardo`` (L^p(0,T; W^{s,p})
            seminorm) or ``weighted`` (alias of lebesgue, for readability).
        p: integrability exponent (``inf`` allowed for lebesgue/bochner).
        weight: integrand multiplied by ``delta^weight`` (lebesgue/bochner).
        k: optional truncation level applied to u first.
        s: fractional order, required for ``gagliardo``.
    """

    kind: str
    p: float
    weight: float = 0.0
    k: float | None = None
    s: float | None = None

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if not self.p >= 1:
            raise ExponentOutOfRange(f"exponent must be >= 1, got {self.p}")
        if self.kind == "gagliardo":
            if self.s is None or not 0 < self.s < 1:
                raise ExponentOutOfRange("gagliardo seminorm needs s in (0, 1)")
            if np.isinf(self.p):
                raise ExponentOutOfRange("gagliardo seminorm needs a finite exponent")
        if self.k is not None and not self.k > 0:
            raise ExponentOutOfRange("truncation level must be positive")


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def _levels(u: Field | SpaceTimeField) -> tuple[DomainGrid, np.ndarray, np.ndarray | None]:
    if isinstance(u, SpaceTimeField):
        return u.grid, u.values, trapezoid_weights(u.times)
    return u.grid, u.values[None, :], None


def _combine(per_level: np.ndarray, tw: np.ndarray | None, p: float) -> float:
    """Integrate ``per_level`` (already the space integral of |.|^p) in time."""
    if np.isinf(p):
        return float(per_level.max())
    total = per_level[0] if tw is None else float(np.dot(tw, per_level))
    return float(total ** (1 / p))


def norm(u: Field | SpaceTimeField, spec: NormSpec) -> float:
    """Discrete norm of a field or trajectory."""
    grid, vals, tw = _levels(u)
    if spec.k is not None:
        vals = np.clip(vals, -spec.k, spec.k)
    p = spec.p
    if spec.kind == "gagliardo":
        per = np.array([gagliardo_power(grid, v, p, spec.s) for v in vals])
        return _combine(per, tw, p)
    if spec.kind == "bochner":
        integrand = grid.grad_norm(vals)
    else:
        integrand = np.abs(vals)
    if spec.weight:
        integrand = integrand * grid.delta**spec.weight
    if np.isinf(p):
        per = integrand.max(axis=1)
    else:
        per = (integrand**p).sum(axis=1) * grid.cell_volume
    return _combine(per, tw, p)


def _direction_mean(N: int, q: float) -> float:
    """Average of |cos(angle)|^q over the unit sphere."""
    if N == 1:
        return 1.0
    return float(gamma((q + 1) / 2) / (np.sqrt(np.pi) * gamma(q / 2 + 1)))


def _edge_gradient_power(grid: DomainGrid, u: np.ndarray, q: float) -> float:
    """Sum over the padded lattice of ``g^q``, ``g^2 = sum_a mean of squared one-sided differences``."""
    lat = grid.to_lattice(u, pad=1)
    g2 = np.zeros_like(lat)
    for a in range(grid.dimension):
        d = np.diff(lat, axis=a) / grid.h
        sq = d**2
        lo = [slice(None)] * grid.dimension
        hi = [slice(None)] * grid.dimension
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        g2[tuple(lo)] += sq / 2
        g2[tuple(hi)] += sq / 2
    return float((g2 ** (q / 2)).sum())


def gagliardo_power(grid: DomainGrid, u: np.ndarray, q: float, s: float) -> float:
    """``[u]^q_{W^{s,q}(R^N)}`` for a zero-extended nodal field.

    Interior pair sum, analytic exterior tail (the lattice zeta minus the
    interior row sum), and the self-cell Taylor term used by the operator
    assembly.  At ``q = 2`` this equals ``(2/a) <Au, u> h^N`` exactly.
    """
    N, h, k = grid.dimension, grid.h, grid.index
    sigma = N + q * s
    u = np.asarray(u, dtype=float)
    pair = 0.0
    rowsum = np.zeros(u.size)
    absq = np.abs(u) ** q
    for lo in range(0, u.size, 512):
        sl = slice(lo, min(lo + 512, u.size))
        r2 = ((k[sl, None, :] - k[None, :, :]) ** 2).sum(-1).astype(float)
        r2[r2 == 0] = np.inf
        w = r2 ** (-sigma / 2)
        pair += float((np.abs(u[sl, None] - u[None, :]) ** q * w).sum())
        rowsum[sl] = w.sum(axis=1)
    tail = 2.0 * float(np.dot(absq, lattice_zeta(N, sigma) - rowsum))
    kappa = -_direction_mean(N, q) * lattice_zeta(N, N - q * (1 - s)) * h ** (q * (1 - s))
    self_cell = kappa * _edge_gradient_power(grid, u, q) * h**N
    return h ** (N - q * s) * (pair + tail) + self_cell


# -- fits --------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares line through (log x, log y)."""

    abscissa: np.ndarray
    ordinate: np.ndarray
    slope: float
    intercept: float
    r2: float

    @property
    def reliable(self) -> bool:
        return self.r2 >= MIN_R2


def fit_loglog(x: Sequence[float], y: Sequence[float], logged: bool = False) -> ExponentFit:
    """Fit ``log y = slope log x + intercept`` on at least 4 points.

    With ``logged=True`` the inputs are already logarithms.  A fit with
    R^2 below 0.9 is returned but triggers a warning.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4 or x.size != y.size:
        raise InsufficientSamples(f"need at least 4 points, got {x.size}")
    lx, ly = (x, y) if logged else (np.log(x), np.log(y))
    slope, icpt = np.polyfit(lx, ly, 1)
    ss_res = float(((ly - (slope * lx + icpt)) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < MIN_R2:
        warnings.warn(f"exponent fit has R^2 = {r2:.3f} < {MIN_R2}", RuntimeWarning, stacklevel=2)
    return ExponentFit(np.exp(lx), np.exp(ly), float(slope), float(icpt), r2)


def geometric_bands(h: float, count: int, ratio: float = 2.0, start: float = 2.0):
    """Band edges ``[start*h*ratio^j, start*h*ratio^(j+1))`` for j < count."""
    edges = start * h * ratio ** np.arange(count + 1)
    return list(zip(edges[:-1], edges[1:]))


@dataclass(frozen=True)
class BandFit:
    bands: tuple[tuple[float, float], ...]
    mean_u: np.ndarray
    fit: ExponentFit

    @property
    def slope(self) -> float:
        return self.fit.slope

    def rows(self) -> list[tuple]:
        return [
            (lo, hi, float(m), self.fit.slope, self.fit.r2)
            for (lo, hi), m in zip(self.bands, self.mean_u)
        ]


def boundary_exponent(u: Field, bands: Sequence[tuple[float, float]]) -> BandFit:
    """Slope of band-averaged log u against band-averaged log delta.

    Averaging in log space makes the fit exact for pure powers of delta.
    """
    if len(bands) < 4:
        raise EmptyBand(f"need at least 4 bands, got {len(bands)}")
    d, v = u.grid.delta, u.values
    lx, ly, mean_u = [], [], []
    for lo, hi in bands:
        sel = (d >= lo) & (d < hi) & (v > 0)
        if sel.sum() < 5:
            raise EmptyBand(f"band [{lo:.3g}, {hi:.3g}) holds {sel.sum()} positive nodes")
        lx.append(np.log(d[sel]).mean())
        ly.append(np.log(v[sel]).mean())
        mean_u.append(v[sel].mean())
    fit = fit_loglog(lx, ly, logged=True)
    return BandFit(tuple((float(a), float(b)) for a, b in bands), np.array(mean_u), fit)


@dataclass(frozen=True)
class HopfResult:
    t0: float
    c: float
    argmin: int


def hopf_check(u: SpaceTimeField, t0: float, s: float) -> HopfResult:
    """Largest c with ``u(x, t0) >= c delta^s(x)`` on nodes with ``delta >= 2h``."""
    g = u.grid
    j = u.level(t0)
    ok = np.flatnonzero(g.delta >= 2 * g.h)
    ratio = u.values[j, ok] / g.delta[ok] ** s
    i = int(np.argmin(ratio))
    return HopfResult(float(u.times[j]), max(float(ratio[i]), 0.0), int(ok[i]))


def weighted_hardy_quotient(u: Field, alpha: float, sigma: float) -> float:
    """``int |u|^a delta^(sigma-a) / int |grad u|^a delta^sigma``."""
    if not alpha > 1 or not sigma < alpha - 1:
        raise ExponentOutOfRange(f"need alpha > 1 and sigma < alpha - 1, got {alpha}, {sigma}")
    g = u.grid
    num = float((np.abs(u.values) ** alpha * g.delta ** (sigma - alpha)).sum())
    den = float((g.grad_norm(u.values) ** alpha * g.delta**sigma).sum())
    if not den > 1e-300:
        raise DegenerateDenominator("gradient integral vanishes")
    return num / den


# -- boundary-layer divergence ------------------------------------------------


def _layer_measure(shape: str, N: int):
    """Density of the (N-1)-measure of the level set {delta = d} for the unit domain."""
    if shape == "interval" or N == 1:
        return lambda d: 2.0
    if shape == "ball":
        return lambda d: 2 * np.pi * (1 - d)
    if shape == "box":
        return lambda d: 8 * (1 - d)
    raise ValueError(f"unknown shape {shape!r}")


def boundary_layer_integral(e: float, lo: float, hi: float, shape: str = "ball", N: int = 2) -> float:
    """``int_{lo < delta < hi} delta^{-e} dx`` over the unit domain."""
    dens = _layer_measure(shape, N)
    val, err = integrate.quad(
        lambda y: np.exp(y * (1 - e)) * dens(np.exp(y)), np.log(lo), np.log(hi), epsabs=0, epsrel=1e-12
    )
    return float(val)


@dataclass(frozen=True)
class DivergenceEntry:
    alpha: float
    fitted: float
    predicted: float
    classification: str
    r2: float


def divergence_scan(
    s: float,
    alphas: Sequence[float],
    hs: Sequence[float],
    shape: str = "ball",
    N: int = 2,
    tol: float = 0.05,
) -> list[DivergenceEntry]:
    """Growth exponent of ``int_{delta > h} delta^{(s-1) alpha} dx`` as h decreases.

    The exponent is the log-log slope of the increments between consecutive
    h values; it should match ``1 - (1-s) alpha``.  Negative means power
    divergence, |exponent| <= tol is reported as logarithmic.
    """
    hs = np.asarray(hs, dtype=float)
    if hs.size < 4 or np.any(np.diff(hs) >= 0):
        raise InsufficientSamples("need at least 4 strictly decreasing h values")
    out = []
    for a in alphas:
        e = (1 - s) * a
        incr = [boundary_layer_integral(e, h1, h0, shape, N) for h0, h1 in zip(hs[:-1], hs[1:])]
        with warnings.catch_warnings():
            # a flat (logarithmic) increment sequence has R^2 near 0 by construction
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_loglog(hs[:-1], incr)
        pred = 1 - e
        if fit.slope < -tol:
            cls = "divergent"
        elif fit.slope > tol:
            cls = "convergent"
        else:
            cls = "logarithmic"
        out.append(DivergenceEntry(float(a), fit.slope, pred, cls, fit.r2))
    return out


def sobolev_constant(u: Field, s: float, p: float = 2.0) -> float:
    """``[u]^p_{W^{s,p}} / ||u||^p_{L^{p*}}`` with ``p* = pN/(N - ps)``."""
    g = u.grid
    N = g.dimension
    if not N > p * s:
        raise ExponentOutOfRange(f"need N > ps, got N={N}, p={p}, s={s}")
    pstar = p * N / (N - p * s)
    semi = gagliardo_power(g, u.values, p, s)
    lp = (np.abs(u.values) ** pstar).sum() * g.cell_volume
    if not lp > 0:
        raise DegenerateDenominator("field vanishes")
    return float(semi / lp ** (p / pstar))
