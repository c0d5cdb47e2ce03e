from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fkpz.diagnostics import NormSpec, norm
from fkpz.errors import CflViolation, MonotonicityViolation
from fkpz.grid import SpaceTimeField
from fkpz.kpz import (
    DriftProblem,
    KpzProblem,
    Thresholds,
    blowup_monitor,
    blowup_window,
    comparison_experiment,
    drift_picard,
    drift_solve,
    fix001_conditions,
    fixed_point_residual,
    hhh2_conditions,
    hhh_conditions,
    monotone_limit_solve,
    picard_solve,
    regularized_nonlinearity,
    regularized_solve,
    solve_kpz_imex,
    stationary_source_gradient_norms,
)
from fkpz.linsolve import LinearProblem, solve_imex


def _lin(K, u0=None, source=None, T=0.5):
    n = K.grid.node_count
    return LinearProblem(K.operator, np.zeros(n) if u0 is None else u0, T, source, bundle=K)


def _rel_l1(a: SpaceTimeField, b: SpaceTimeField) -> float:
    l1 = NormSpec("lebesgue", 1)
    return norm(SpaceTimeField(a.grid, a.times, a.values - b.values), l1) / norm(b, l1)


@settings(max_examples=40, deadline=None)
@given(N=st.sampled_from([1, 2]), s=st.floats(0.51, 0.99))
def test_thresholds_match_oracles(N, s):
    th = Thresholds(N, s)
    assert th.subcritical == pytest.approx(oracles.subcritical_threshold(N, s))
    assert th.weighted == pytest.approx(oracles.weighted_threshold(s))
    assert th.nonexistence == pytest.approx(oracles.nonexistence_threshold(s))
    assert th.uniqueness == pytest.approx(oracles.uniqueness_threshold(N, s))
    assert th.subcritical < th.nonexistence


def test_classification_at_s_075():
    th = Thresholds(2, 0.75)
    assert th.subcritical == pytest.approx(3.5 / 3)
    assert [th.classify(a) for a in (1.1, 2.0, 3.5, 4.5)] == [
        "subcritical-L1",
        "intermediate",
        "open-gap",
        "nonexistence",
    ]


def test_condition_predicates():
    assert blowup_window(2.0, 0.85)
    assert not blowup_window(2.0, 0.6)
    lo, hi = oracles.blowup_window(0.85)
    assert not blowup_window(lo, 0.85) and not blowup_window(hi, 0.85)
    assert oracles.GOLDEN < 0.85
    # the global-gradient regime needs s close to 1: (2s-1)/(1-s) > (N+2s)^2/(N+1)
    assert not hhh_conditions(1.3, 2, 0.75, 10.0)
    assert hhh_conditions(1.3, 2, 0.9, 100.0)
    assert fix001_conditions(1.2, 2, 0.75, 100.0)
    assert not fix001_conditions(3.5, 2, 0.75, 100.0)
    assert not hhh2_conditions(1.3, 2, 0.75, 10.0)


def test_alpha_must_exceed_one(K_ball):
    with pytest.raises(ValueError):
        KpzProblem(_lin(K_ball), 1.0)


def test_picard_zero_data(K_ball):
    u, st_ = picard_solve(KpzProblem(_lin(K_ball), 1.1), 1e-10, 5)
    assert st_.converged and st_.n == 1
    assert np.all(u.values == 0)


@pytest.fixture(scope="module")
def subcritical(K_ball):
    g = K_ball.grid
    f = 2 * np.exp(-4 * (g.nodes**2).sum(axis=1))
    return KpzProblem(_lin(K_ball, source=f), 1.1)


def test_picard_subcritical_matches_imex(subcritical):
    u, state = picard_solve(subcritical, 1e-8, 200)
    assert state.converged and state.contained
    assert state.horizon == subcritical.linear.T
    assert fixed_point_residual(subcritical, u) <= 5e-8
    ref = solve_kpz_imex(subcritical, subcritical.linear.T / 256)
    assert _rel_l1(u, SpaceTimeField(u.grid, u.times, ref.values[::4])) < 0.02
    late = state.residuals[3:]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(late[:-1], late[1:]))


def test_regularized_values_and_large_a(subcritical, K_ball):
    g = K_ball.grid
    term = regularized_nonlinearity(g, 1.1, 0.5)
    u = regularized_solve(subcritical, 0.5, 1 / 64)
    vals = np.array([term(v) for v in u.values])
    assert vals.min() >= 0 and vals.max() < 1
    lin = solve_imex(subcritical.linear, 1 / 64)
    far = regularized_solve(subcritical, 1e8, 1 / 64)
    assert np.abs(far.values - lin.values).max() < 1e-6
    with pytest.raises(ValueError):
        regularized_nonlinearity(g, 1.1, 0.0)


def test_regularized_ordering_in_a(subcritical):
    # rho^alpha/(a + rho^alpha) decreases in a, so the smaller a gives the larger solution
    u1 = regularized_solve(subcritical, 0.5, 1 / 64)
    u2 = regularized_solve(subcritical, 2.0, 1 / 64)
    assert np.all(u1.values >= u2.values - 1e-12)
    assert (u1.values - u2.values).max() > 0


def test_monotone_limit(subcritical):
    res = monotone_limit_solve(subcritical, [1, 2, 4, 8, 16, 32, 64, 128], 0.5 / 64)
    assert res.max_violation <= res.tolerance
    assert all(b < a for a, b in zip(res.gaps[:-1], res.gaps[1:]))
    assert res.minimal_candidate
    u, _ = picard_solve(subcritical, 1e-8, 200)
    lim = res.solution
    stride = (len(lim) - 1) // (len(u) - 1)
    assert _rel_l1(SpaceTimeField(u.grid, u.times, lim.values[::stride]), u) < 0.03
    with pytest.raises(ValueError):
        monotone_limit_solve(subcritical, [4, 2], 0.1)


def test_monotone_bounded_source_truncation_inactive(K_ball):
    P = KpzProblem(_lin(K_ball, source=0.5), 1.1)
    res = monotone_limit_solve(P, [100, 200, 400], 0.5 / 32)
    assert res.gaps[1] < res.gaps[0] < 1e-3


def test_drift_zero_reduces_to_linear(K_ball):
    lin = _lin(K_ball, source=1.0)
    B = np.zeros((K_ball.grid.node_count, 2))
    u = drift_solve(DriftProblem(lin, B), 1 / 32)
    np.testing.assert_array_equal(u.values, solve_imex(lin, 1 / 32).values)


@pytest.fixture(scope="module")
def drift(K_ball):
    g = K_ball.grid
    x1, x2 = g.nodes.T
    B = 2 * np.stack([np.sin(np.pi * x2), np.cos(np.pi * x1)], axis=1)
    return DriftProblem(_lin(K_ball, source=1.0), B)


def test_drift_positivity_and_cfl(drift):
    assert drift.uniqueness_regime
    u = drift_solve(drift, 1 / 64)
    assert u.values.min() >= 0
    with pytest.raises(CflViolation):
        drift_solve(drift, 0.1)


def test_drift_picard_initializations_agree(drift):
    g = drift.linear.grid
    shape = (33, g.node_count)
    tol = 1e-10
    a, _ = drift_picard(drift, 1 / 64, np.zeros(shape), tol)
    b, _ = drift_picard(drift, 1 / 64, np.tile(5 * np.cos(3 * g.nodes[:, 0]), (33, 1)), tol)
    gap = np.abs(a.values - b.values).sum(axis=1).max() * g.cell_volume
    assert gap <= 10 * tol
    ref = drift_solve(drift, 1 / 64)
    assert np.abs(a.values - ref.values).max() < 1e-8


def test_comparison_identical_and_shifted(subcritical, K_ball):
    g = K_ball.grid
    f1 = subcritical.linear.source_at(0.0)
    z = np.zeros(g.node_count)
    same = comparison_experiment(subcritical, (f1, z), (f1, z), 1 / 32)
    assert same.max_violation == 0
    for dt in (1 / 16, 1 / 32, 1 / 64):
        rep = comparison_experiment(subcritical, (f1, z), (f1 + 1, z), dt)
        assert rep.max_violation <= 10 * dt * g.h


def test_blowup_monitor_zero(K_ball):
    u = SpaceTimeField(K_ball.grid, np.linspace(0, 1, 5), np.zeros((5, K_ball.grid.node_count)))
    rep = blowup_monitor(u, K_ball, 2.0)
    assert np.all(rep.Y == 0) and not rep.blowup


def test_blowup_monitor_linear_residual(K_ball):
    lin = _lin(K_ball, source=1.0)
    res = []
    for dt in (1 / 100, 1 / 200):
        u = solve_imex(lin, dt)
        rep = blowup_monitor(u, K_ball, 2.0, source=lin.source_at, gradient_term=False)
        res.append(np.abs(rep.residual[1:]).max())
    assert res[0] / res[1] == pytest.approx(2.0, rel=0.25)


def test_stationary_norms_grow_for_large_q(K_ball, K_ball16):
    q = 1 / (1 - 0.75) + 0.2
    study = stationary_source_gradient_norms([K_ball, K_ball16], q, 0.5)
    # |grad delta^s|^q integrates like h^{1-(1-s)q}: growth per halving at least 2^{-rate/q}
    floor = 2 ** (-oracles.stationary_gradient_rate(0.75, q) / q)
    assert floor > 1
    assert study.ratios[0] > floor
