"""The ten experiment kinds run by the command line.

Each runner takes a validated :class:`~fkpz.config.ExperimentConfig` and an
output directory, writes its CSV tables there and returns an
:class:`Outcome`.  Exit code 2 marks a verified mathematical negative
(divergence, blow-up); it is not a software failure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (
    NormSpec,
    boundary_exponent,
    divergence_scan,
    fit_loglog,
    geometric_bands,
    hopf_check,
    norm,
)
from .errors import ConfigInvalid, Diverged, FkpzError
from .expr import Expression
from .fraclap import FracParams, OperatorMatrix, assemble, symbol_calibration
from .grid import DomainGrid, SpaceTimeField, build_grid, sample_function
from .heatkernel import (
    KernelBundle,
    eigendecompose,
    green_function,
    kernel_gradient_bound,
    validate_green_bounds,
    validate_kernel_bounds,
)
from .kpz import (
    DriftProblem,
    KpzProblem,
    Thresholds,
    blowup_monitor,
    drift_picard,
    drift_solve,
    picard_solve,
    solve_kpz_imex,
)
from .linsolve import (
    LinearProblem,
    decay_study,
    near_delta,
    regularity_report,
    solve_duhamel,
    solve_imex,
    time_grid,
)
from .output import write_csv

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2
NONEXISTENCE_VERDICT = "nonexistence-consistent divergence"


@dataclass
class Outcome:
    """Verdict, headline numbers and emitted files of one run.

    ``primary`` is the scalar used for refinement (h-sweep) tables.
    """

    verdict: str
    exit_code: int = EXIT_OK
    headline: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    primary: float = float("nan")
    classification: str = ""


# -- shared setup ----------------------------------------------------------------


def make_grid(cfg: ExperimentConfig, h: float | None = None) -> DomainGrid:
    g = cfg.grid
    return build_grid(g.dimension, g.shape, g.h if h is None else h, g.radius)


def make_operator(cfg: ExperimentConfig, grid: DomainGrid) -> OperatorMatrix:
    return assemble(grid, FracParams(cfg.physics.s, grid.dimension, cfg.physics.convention))


def source_of(formula, grid: DomainGrid):
    """Stationary nodal array, or a callable of t when the formula uses t."""
    if isinstance(formula, Expression) and formula.depends_on_time:
        return lambda t: sample_function(grid, formula, t).values
    return sample_function(grid, formula).values


def make_linear(
    cfg: ExperimentConfig, A: OperatorMatrix, K: KernelBundle | None = None, u0: np.ndarray | None = None
) -> LinearProblem:
    g = A.grid
    d = cfg.data
    init = sample_function(g, d.u0).values if u0 is None else u0
    T = cfg.physics.T if cfg.physics.T is not None else 1.0
    return LinearProblem(A, init, T, source_of(d.f, g), d.m, 1.0, d.beta, K)


def _steps(cfg: ExperimentConfig) -> int:
    return max(1, int(round(cfg.physics.T / cfg.physics.dt)))


def trajectory_rows(u: SpaceTimeField, s: float, theta: float, q: float) -> list[tuple]:
    rows = []
    for j, t in enumerate(u.times):
        f = u.at(j)
        rows.append(
            (
                float(t),
                norm(f, NormSpec("lebesgue", 1)),
                norm(f, NormSpec("lebesgue", 2)),
                norm(f, NormSpec("lebesgue", theta, weight=-s)),
                norm(f, NormSpec("bochner", q)),
            )
        )
    return rows


def _floats(value, key: str) -> list[float]:
    """Number or list of numbers from an options entry."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigInvalid(key, f"expected a number or a list of numbers, got {value!r}") from None


# -- runners ---------------------------------------------------------------------


def run_calibrate(cfg: ExperimentConfig, out: Path) -> Outcome:
    N = cfg.grid.dimension
    params = FracParams(cfg.physics.s, N, cfg.physics.convention)
    default_modes = [1, 2, 3] if N == 1 else [[1, 0], [1, 1], [2, 0]]
    modes = cfg.option("modes", default_modes)
    size = int(cfg.option("lattice_size", 256 if N == 1 else 64))
    tol = float(cfg.option("tolerance", 0.02))
    points = symbol_calibration(params, modes, size)
    rows = [
        (p.mode[0], p.mode[1] if N == 2 else 0, p.measured, p.exact, p.rel_error) for p in points
    ]
    files = [write_csv(out, "calibration", rows)]
    errs = [p.rel_error for p in points]
    worst = max(errs)
    verdict = "calibrated" if worst < tol else "outside tolerance"
    head = {
        "symbol_errors": {"x".join(map(str, p.mode)): p.rel_error for p in points},
        "max_rel_error": worst,
        "tolerance": tol,
    }
    return Outcome(verdict, EXIT_OK, head, files, worst)


def run_kernel_check(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    K = eigendecompose(make_operator(cfg, g))
    times = _floats(cfg.option("times", [0.01, 0.1, 0.5]), "options.times")
    prof = validate_kernel_bounds(K, times, int(cfg.option("sample_pairs", 2000)), cfg.seed)
    summary = []
    for t in times:
        sel = prof.t == t
        ratio = prof.ratio[sel]
        summary.append((t, float(ratio.min()), float(ratio.max())))
    grad = kernel_gradient_bound(K, times, int(cfg.option("columns", 64)), cfg.seed)
    files = [
        write_csv(out, "kernel_profile", prof.rows()),
        write_csv(out, "kernel_summary", summary),
    ]
    head = {
        "c_low": prof.c_low,
        "c_high": prof.c_high,
        "spread": prof.spread,
        "gradient_constant": grad.constant,
        "lambda1": K.lambda1,
    }
    ok = np.isfinite(prof.spread)
    return Outcome("bounds fitted" if ok else "bounds not finite", EXIT_OK, head, files, prof.spread)


def run_green_check(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    A = make_operator(cfg, g)
    K = eigendecompose(A)
    prof = validate_green_bounds(
        green_function(K), g, A.params, int(cfg.option("sample_pairs", 20000)), cfg.seed
    )
    files = [
        write_csv(out, "green_profile", [r[1:] for r in prof.rows()]),
        write_csv(out, "green_summary", [(prof.c_low, prof.c_high)]),
    ]
    head = {"c_low": prof.c_low, "c_high": prof.c_high, "spread": prof.spread}
    return Outcome("bounds fitted", EXIT_OK, head, files, prof.spread)


def run_solve_linear(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    A = make_operator(cfg, g)
    lin = make_linear(cfg, A)
    solver = cfg.option("solver", "imex")
    if solver == "duhamel":
        u = solve_duhamel(lin, time_grid(lin.T, cfg.physics.dt))
    elif solver == "imex":
        u = solve_imex(lin, cfg.physics.dt)
    else:
        raise ConfigInvalid("options.solver", f"unknown solver {solver!r}")
    s = cfg.physics.s
    theta = _floats(cfg.option("theta", 1.0), "options.theta")[0]
    q = _floats(cfg.option("q", 1.0), "options.q")[0]
    exps = {k: _floats(cfg.option(k, []), f"options.{k}") for k in ("q", "theta", "p", "a", "w")}
    rep = regularity_report(u, lin, exps)
    files = [
        write_csv(out, "trajectory", trajectory_rows(u, s, theta, q)),
        write_csv(out, "regularity", rep.rows()),
    ]
    grad = norm(u, NormSpec("bochner", q))
    head = {"grad_norm": grad, "q": q, "admissibility": rep.summary()}
    return Outcome("solved", EXIT_OK, head, files, grad)


def run_decay(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    A = make_operator(cfg, g)
    u0 = near_delta(g) if cfg.option("initial", "near-delta") == "near-delta" else None
    lin = make_linear(cfg, A, u0=u0)
    times = cfg.option("times", np.geomspace(0.02, 0.1, 8).tolist())
    st = decay_study(lin, float(cfg.option("rho", 1.0)), float(cfg.option("r", 2.0)), times)
    files = [write_csv(out, "decay", list(zip(st.times, st.norms)))]
    head = {"slope": st.slope, "predicted": st.predicted, "rel_error": st.rel_error}
    return Outcome("slope fitted", EXIT_OK, head, files, st.slope)


def layer_sums(grid_of: Callable[[float], DomainGrid], h: float, s: float, alpha: float, levels: int):
    """``sum_{delta >= h} delta^{(s-1) alpha} h^N`` on successively halved lattices.

    This is the lower bound for ``int |grad u|^alpha`` implied by
    ``u >= c delta^s``; it diverges under refinement when ``(1-s) alpha > 1``.
    """
    hs, sums = [], []
    for k in range(levels):
        hk = h / 2**k
        gk = grid_of(hk)
        d = gk.delta[gk.delta >= hk]
        hs.append(hk)
        sums.append(float((d ** ((s - 1) * alpha)).sum() * gk.cell_volume))
    return np.array(hs), np.array(sums)


def refinement_divergence(cfg: ExperimentConfig, alpha: float) -> tuple[dict, list[tuple]]:
    """Fit the growth exponent of the lattice layer sums' increments."""
    s = cfg.physics.s
    levels = int(cfg.option("refinement_levels", 5))
    hs, sums = layer_sums(lambda hk: make_grid(cfg, hk), cfg.grid.h, s, alpha, levels)
    incr = np.diff(sums)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_loglog(hs[1:], incr) if incr.size >= 4 and np.all(incr > 0) else None
    if fit is None:
        slope = float(np.polyfit(np.log(hs[1:]), np.log(np.maximum(incr, 1e-300)), 1)[0])
    else:
        slope = fit.slope
    info = {"fitted_exponent": slope, "predicted_exponent": 1 - (1 - s) * alpha, "hs": hs, "sums": sums}
    return info, list(zip(hs, sums))


def run_solve_kpz(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    s, alpha = cfg.physics.s, cfg.physics.alpha
    th = Thresholds(g.dimension, s)
    regime = th.classify(alpha)
    head = {"regime": regime, "thresholds": _threshold_dict(th)}
    if alpha > th.nonexistence:
        info, rows = refinement_divergence(cfg, alpha)
        files = [write_csv(out, "layer_sums", rows)]
        head.update(info)
        tol = float(cfg.option("divergence_tol", 0.05))
        if info["fitted_exponent"] < -tol:
            return Outcome(NONEXISTENCE_VERDICT, EXIT_NEGATIVE, head, files, info["fitted_exponent"], regime)
        return Outcome("no divergence detected", EXIT_OK, head, files, info["fitted_exponent"], regime)
    A = make_operator(cfg, g)
    lin = make_linear(cfg, A)
    P = KpzProblem(lin, alpha)
    try:
        u, state = picard_solve(
            P,
            float(cfg.option("tol", 1e-8)),
            int(cfg.option("max_iter", 200)),
            steps=_steps(cfg),
            omega=float(cfg.option("omega", 0.5)),
        )
    except Diverged as exc:
        files = [write_csv(out, "residuals", exc.state.rows())]
        head["reason"] = str(exc)
        return Outcome("diverged", EXIT_NEGATIVE, head, files, float("nan"), regime)
    q = float(cfg.option("q", 1.0))
    files = [
        write_csv(out, "residuals", state.rows()),
        write_csv(out, "trajectory", trajectory_rows(u, s, float(cfg.option("theta", 1.0)), q)),
    ]
    l1 = norm(u, NormSpec("lebesgue", 1))
    head.update(
        iterations=state.n,
        final_residual=state.residuals[-1],
        horizon=state.horizon,
        ball_radius=state.radius,
        ball_contained=state.contained,
        l1_norm=l1,
    )
    return Outcome("converged", EXIT_OK, head, files, l1, regime)


def _threshold_dict(th: Thresholds) -> dict:
    return {
        "subcritical": th.subcritical,
        "weighted": th.weighted,
        "nonexistence": th.nonexistence,
        "uniqueness": th.uniqueness,
    }


def run_scan_alpha(cfg: ExperimentConfig, out: Path) -> Outcome:
    s, N = cfg.physics.s, cfg.grid.dimension
    th = Thresholds(N, s)
    alphas = _floats(cfg.option("alphas", np.linspace(1.05, 4.5, 70).tolist()), "options.alphas")
    classes = [th.classify(a) for a in alphas]
    rows = [(a, c, th.subcritical, th.weighted, th.nonexistence, th.uniqueness) for a, c in zip(alphas, classes)]
    files = [write_csv(out, "thresholds", rows)]
    boundaries = [
        0.5 * (a0 + a1) for a0, a1, c0, c1 in zip(alphas[:-1], alphas[1:], classes[:-1], classes[1:]) if c0 != c1
    ]
    head = {"boundaries": boundaries, "thresholds": _threshold_dict(th)}
    return Outcome("classified", EXIT_OK, head, files)


def _drift_field(cfg: ExperimentConfig, g: DomainGrid):
    comps = cfg.data.B
    if any(isinstance(c, Expression) and c.depends_on_time for c in comps):
        return lambda t: np.stack([sample_function(g, c, t).values for c in comps], axis=1)
    return np.stack([sample_function(g, c).values for c in comps], axis=1)


def run_drift(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    A = make_operator(cfg, g)
    lin = make_linear(cfg, A)
    D = DriftProblem(lin, _drift_field(cfg, g), cfg.data.m)
    dt = cfg.physics.dt
    u = drift_solve(D, dt)
    l1 = NormSpec("lebesgue", 1)
    rows = [(float(t), float(u.values[j].min()), norm(u.at(j), l1)) for j, t in enumerate(u.times)]
    files = [write_csv(out, "drift", rows)]
    head = {"uniqueness_regime": D.uniqueness_regime, "min_u": float(u.values.min())}
    if cfg.option("picard", True):
        tol = float(cfg.option("tol", 1e-10))
        n = len(u)
        rng = np.random.default_rng(cfg.seed)
        v1, h1 = drift_picard(D, dt, np.zeros((n, g.node_count)), tol)
        v2, h2 = drift_picard(D, dt, rng.standard_normal((n, g.node_count)), tol)
        gap = float(np.abs(v1.values - v2.values).max())
        head.update(picard_gap=gap, picard_iterations=[len(h1), len(h2)], tol=tol)
    total = norm(u, l1)
    return Outcome("solved", EXIT_OK, head, files, total)


def run_blowup(cfg: ExperimentConfig, out: Path) -> Outcome:
    g = make_grid(cfg)
    A = make_operator(cfg, g)
    K = eigendecompose(A)
    alpha = cfg.physics.alpha
    phi, vol = K.phi1, g.cell_volume
    factor = cfg.option("u0_factor")
    u0 = None
    if factor is not None:
        # C is scale free along phi1, so the threshold is known before the run
        y_phi = float(phi @ phi) * vol
        c_hat = float(g.grad_norm(phi) ** alpha @ phi) * vol / y_phi**alpha
        y_star = (K.lambda1 / c_hat) ** (1 / (alpha - 1))
        u0 = float(factor) * y_star / y_phi * phi
    lin = make_linear(cfg, A, K, u0)
    P = KpzProblem(lin, alpha)
    cap_factor = float(cfg.option("cap_factor", 1e6))
    # the threshold is fitted at t0 = 0, so it does not depend on the cap
    probe = blowup_monitor(
        SpaceTimeField(g, np.zeros(1), lin.u0[None, :]), K, alpha, lambda t: lin.source_at(t)
    )
    cap = cap_factor * probe.threshold if np.isfinite(probe.threshold) else None
    u = solve_kpz_imex(P, cfg.physics.dt, y_cap=cap)
    monitor = blowup_monitor(u, K, alpha, lin.source_at)
    files = [write_csv(out, "blowup", monitor.rows())]
    head = {
        "c_hat": monitor.c_hat,
        "threshold": monitor.threshold,
        "Y0": float(monitor.Y[0]),
        "Y_max": float(monitor.Y.max()),
        "crossing_time": monitor.crossing_time,
        "stopped": bool(u.meta.get("stopped", False)),
        "stop_time": u.meta.get("stop_time"),
        "lambda1": K.lambda1,
    }
    if monitor.blowup:
        return Outcome("blowup", EXIT_NEGATIVE, head, files, float(monitor.Y.max()))
    return Outcome("bounded", EXIT_OK, head, files, float(monitor.Y.max()))


def run_nonexistence_scan(cfg: ExperimentConfig, out: Path) -> Outcome:
    s = cfg.physics.s
    g0 = cfg.grid
    alphas = _floats(cfg.option("alphas", [3.0, 4.0, 5.0]), "options.alphas")
    hs = _floats(cfg.option("hs", [2.0**-k for k in range(6, 13)]), "options.hs")
    entries = divergence_scan(s, alphas, hs, g0.shape, g0.dimension, float(cfg.option("divergence_tol", 0.05)))
    rows = [(e.alpha, e.fitted, e.predicted, e.classification, e.r2) for e in entries]
    files = [write_csv(out, "divergence", rows)]
    head = {"entries": [e.__dict__ for e in entries]}
    g = make_grid(cfg)
    A = make_operator(cfg, g)
    cfg_T = cfg.physics.T if cfg.physics.T is not None else 1.0
    lin = make_linear(cfg, A)
    steps = max(16, int(cfg.option("steps", 64)))
    u = solve_duhamel(lin, np.linspace(0.0, cfg_T, steps + 1))
    hop = hopf_check(u, cfg_T, s)
    head.update(hopf_c=hop.c, hopf_t0=hop.t0)
    try:
        count = int(cfg.option("bands", 4))
        ratio = (0.5 * g0.radius / (2 * g.h)) ** (1 / count)
        bands = boundary_exponent(u.at(len(u) - 1), geometric_bands(g.h, count, ratio))
        files.append(write_csv(out, "bands", bands.rows()))
        head["boundary_exponent"] = bands.slope
    except FkpzError as exc:
        head["boundary_exponent_error"] = str(exc)
    th = Thresholds(g.dimension, s)
    confirmed = [e.alpha for e in entries if e.alpha > th.nonexistence and e.classification == "divergent"]
    head["confirmed_alphas"] = confirmed
    if confirmed and hop.c > 0:
        return Outcome(NONEXISTENCE_VERDICT, EXIT_NEGATIVE, head, files, hop.c)
    return Outcome("no divergence detected", EXIT_OK, head, files, hop.c)


RUNNERS: dict[str, Callable[[ExperimentConfig, Path], Outcome]] = {
    "calibrate": run_calibrate,
    "kernel-check": run_kernel_check,
    "green-check": run_green_check,
    "solve-linear": run_solve_linear,
    "decay": run_decay,
    "solve-kpz": run_solve_kpz,
    "scan-alpha": run_scan_alpha,
    "drift": run_drift,
    "blowup": run_blowup,
    "nonexistence-scan": run_nonexistence_scan,
}


def run_experiment(cfg: ExperimentConfig, out: Path) -> Outcome:
    return RUNNERS[cfg.kind](cfg, out)
