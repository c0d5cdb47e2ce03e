from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fkpz.diagnostics import (
    NormSpec,
    boundary_exponent,
    boundary_layer_integral,
    divergence_scan,
    fit_loglog,
    geometric_bands,
    gagliardo_power,
    hopf_check,
    norm,
    sobolev_constant,
    weighted_hardy_quotient,
)
from fkpz.errors import DegenerateDenominator, EmptyBand, ExponentOutOfRange, InsufficientSamples
from fkpz.fraclap import FracParams, assemble, normalization_constant
from fkpz.grid import Field, SpaceTimeField, build_grid
from fkpz.linsolve import LinearProblem, solve_duhamel


def test_normspec_validation():
    with pytest.raises(ExponentOutOfRange):
        NormSpec("lebesgue", 0.5)
    with pytest.raises(ExponentOutOfRange):
        NormSpec("gagliardo", 2.0)
    with pytest.raises(ValueError):
        NormSpec("sobolev", 2.0)


def test_unit_box_norm():
    g = build_grid(2, "box", 1 / 16, radius=0.5)
    # (2m+1)^2 h^2 nodes cover a unit area up to one layer; constant 1 integrates to ~1
    one = Field(g, np.ones(g.node_count))
    assert norm(one, NormSpec("lebesgue", 2)) == pytest.approx(np.sqrt(g.node_count * g.cell_volume))
    assert g.node_count * g.cell_volume == pytest.approx(1.0, rel=0.15)
    assert norm(one, NormSpec("lebesgue", np.inf)) == 1.0


def test_gagliardo_zero_and_quadratic_form(op_ball, ball):
    z = np.zeros(ball.node_count)
    assert gagliardo_power(ball, z, 2.0, 0.75) == 0.0
    u = np.exp(-3 * (ball.nodes**2).sum(axis=1))
    form = float(op_ball.matvec(u) @ u) * ball.cell_volume
    semi = gagliardo_power(ball, u, 2.0, 0.75)
    ratio = form / semi
    # the ratio is the kernel constant over two, independent of u
    v = np.cos(2 * ball.nodes[:, 0]) * (1 - (ball.nodes**2).sum(axis=1))
    ratio2 = float(op_ball.matvec(v) @ v) * ball.cell_volume / gagliardo_power(ball, v, 2.0, 0.75)
    assert ratio == pytest.approx(ratio2, rel=1e-10)
    assert ratio == pytest.approx(normalization_constant(op_ball.params) / 2, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-50, 50).filter(lambda c: c == 0 or abs(c) > 1e-6), kind=st.sampled_from(["lebesgue", "bochner"]), p=st.sampled_from([1.0, 1.5, 2.0, np.inf]))
def test_homogeneity(ball, c, kind, p):
    u = Field(ball, np.sin(3 * ball.nodes[:, 0]) + ball.delta)
    spec = NormSpec(kind, p, weight=0.25)
    assert norm(Field(ball, c * u.values), spec) == pytest.approx(abs(c) * norm(u, spec), rel=1e-12, abs=1e-300)


def test_truncated_norm(ball):
    u = Field(ball, 3 * ball.delta)
    assert norm(u, NormSpec("lebesgue", np.inf, k=0.5)) == 0.5


def test_fit_requires_points_and_warns():
    with pytest.raises(InsufficientSamples):
        fit_loglog([1, 2, 3], [1, 2, 3])
    with pytest.warns(RuntimeWarning):
        fit = fit_loglog([1, 2, 3, 4, 5], [1, 5, 1, 5, 1])
    assert not fit.reliable
    x = np.array([1.0, 2, 4, 8])
    fit = fit_loglog(x, 3 * x**-0.5)
    assert fit.slope == pytest.approx(-0.5) and fit.r2 == pytest.approx(1.0)


@pytest.mark.parametrize("gamma", [0.5, 0.75, 1.0])
def test_boundary_exponent_synthetic(gamma):
    g = build_grid(2, "ball", 1 / 64)
    bands = geometric_bands(g.h, 4, np.sqrt(2))
    fit = boundary_exponent(Field(g, g.delta**gamma), bands)
    assert fit.slope == pytest.approx(gamma, abs=1e-3)
    assert len(fit.rows()) == 4


def test_boundary_exponent_needs_bands(ball):
    with pytest.raises(EmptyBand):
        boundary_exponent(Field(ball, ball.delta), geometric_bands(ball.h, 3))
    with pytest.raises(EmptyBand):
        boundary_exponent(Field(ball, ball.delta), geometric_bands(ball.h, 4, 4.0))


def test_torsion_exponent_coarse():
    g = build_grid(2, "ball", 1 / 32)
    A = assemble(g, FracParams(0.75, 2))
    w = np.linalg.solve(A.dense, np.ones(g.node_count))
    fit = boundary_exponent(Field(g, w), geometric_bands(g.h, 4, np.sqrt(2)))
    assert fit.slope == pytest.approx(0.75, abs=0.1)


def test_hopf(K_ball, K_ball16):
    g = K_ball.grid
    phi = K_ball.phi1
    P = LinearProblem(K_ball.operator, phi, 0.5, bundle=K_ball)
    u = solve_duhamel(P, np.linspace(0, 0.5, 17))
    ok = g.delta >= 2 * g.h
    res = hopf_check(u, 0.25, 0.75)
    expected = np.exp(-K_ball.lambda1 * 0.25) * (phi[ok] / g.delta[ok] ** 0.75).min()
    assert res.c == pytest.approx(expected, rel=1e-8)
    zero = SpaceTimeField(g, u.times, np.zeros_like(u.values))
    assert hopf_check(zero, 0.25, 0.75).c == 0.0
    cs = []
    for K in (K_ball, K_ball16):
        Q = LinearProblem(K.operator, np.zeros(K.grid.node_count), 0.5, 1.0, bundle=K)
        v = solve_duhamel(Q, np.linspace(0, 0.5, 17))
        cs.append(hopf_check(v, 0.25, 0.75).c)
        assert all(hopf_check(v, t, 0.75).c > 0 for t in (0.0625, 0.25, 0.5))
    assert 0.5 < cs[1] / cs[0] < 2


def test_weighted_hardy():
    g = build_grid(2, "ball", 1 / 16)
    q = weighted_hardy_quotient(Field(g, g.delta), 2.0, 0.0)
    assert np.isfinite(q) and q > 0
    with pytest.raises(ExponentOutOfRange):
        weighted_hardy_quotient(Field(g, g.delta), 2.0, 1.5)
    with pytest.raises(DegenerateDenominator):
        weighted_hardy_quotient(Field(g, np.zeros(g.node_count)), 2.0, 0.0)


def test_weighted_hardy_refinement():
    s = 0.75
    grids = [build_grid(1, "interval", h) for h in (1 / 64, 1 / 128, 1 / 256)]
    # alpha (1-s) = 1.25 > 1 + sigma: numerator blows up at the rate of the 1D layer integral
    div = [weighted_hardy_quotient(Field(g, g.delta**s), 5.0, 0.0) for g in grids]
    assert div[2] > div[1] > div[0]
    e = 5.0 - 5.0 * s
    ratio = oracles.interval_layer_integral(e, 1 / 256, 1) / oracles.interval_layer_integral(e, 1 / 128, 1)
    num = [(g.delta ** (s * 5.0 - 5.0)).sum() * g.h for g in grids]
    assert num[2] / num[1] == pytest.approx(ratio, rel=0.1)
    # alpha (1-s) = 0.5 < 1 + sigma: stable
    ok = [weighted_hardy_quotient(Field(g, g.delta**s), 2.0, 0.0) for g in grids]
    assert ok[2] / ok[1] == pytest.approx(1.0, rel=0.1)


def test_layer_integral_matches_closed_form():
    assert boundary_layer_integral(1.25, 1e-3, 0.5, "interval", 1) == pytest.approx(
        oracles.interval_layer_integral(1.25, 1e-3, 0.5), rel=1e-10
    )


def test_divergence_scan_examples():
    hs = 2.0 ** -np.arange(6, 13)
    rows = {r.alpha: r for r in divergence_scan(0.75, [3, 4, 5], hs)}
    assert rows[5].classification == "divergent"
    assert rows[5].predicted == pytest.approx(-0.25)
    assert rows[4].classification == "logarithmic"
    assert rows[3].classification == "convergent"
    for a in (3, 5):
        assert rows[a].fitted == pytest.approx(oracles.layer_exponent(0.75, a), rel=0.1)
    with pytest.raises(InsufficientSamples):
        divergence_scan(0.75, [5], [0.1, 0.05, 0.025])


def test_sobolev_constant_positive_and_stable():
    vals = []
    for h in (1 / 8, 1 / 16):
        g = build_grid(2, "ball", h)
        u = Field(g, np.maximum(1 - (g.nodes**2).sum(axis=1), 0))
        vals.append(sobolev_constant(u, 0.75))
    assert all(v > 0 for v in vals)
    assert 0.5 < vals[1] / vals[0] < 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ExponentOutOfRange):
            sobolev_constant(u, 0.75, p=3.0)
