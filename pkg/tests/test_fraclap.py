from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fkpz.errors import GridMismatch, MatrixTooLarge
from fkpz.fraclap import (
    FracParams,
    apply,
    assemble,
    kernel_constant,
    lattice_zeta,
    load_dump,
    normalization_constant,
    symbol_calibration,
)
from fkpz.grid import Field, build_grid


def test_constant_closed_forms():
    assert kernel_constant(0.5, 1, "paper-half") == pytest.approx(1 / (2 * math.pi), rel=1e-14)
    assert kernel_constant(0.5, 1) == pytest.approx(1 / math.pi, rel=1e-14)


def test_fourier_constant_matches_quadrature_oracle():
    for s in (0.5, 0.6, 0.75, 0.9):
        assert kernel_constant(s, 1) == pytest.approx(oracles.fourier_constant_by_quadrature(s), rel=1e-8)


@pytest.mark.parametrize("N", [1, 2])
@pytest.mark.parametrize("s", [0.55, 0.75, 0.95])
def test_conventions_differ_by_two(N, s):
    f = normalization_constant(FracParams(s, N))
    p = normalization_constant(FracParams(s, N, "paper-half"))
    assert f == pytest.approx(2 * p, rel=1e-15)
    assert f == pytest.approx(oracles.gamma_constant(s, N), rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        FracParams(0.5, 1)
    with pytest.raises(ValueError):
        FracParams(0.75, 3)
    with pytest.raises(ValueError):
        FracParams(0.75, 1, "other")


@pytest.mark.parametrize("N,sigma", [(1, 2.5), (1, 2.9), (2, 3.5), (2, 3.9)])
def test_lattice_zeta_matches_direct_sum(N, sigma):
    assert lattice_zeta(N, sigma) == pytest.approx(oracles.lattice_sum_direct(N, sigma), rel=1e-6)


def test_matrix_structure(op_ball):
    A = op_ball.dense
    np.testing.assert_array_equal(A, A.T)
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 0)
    assert np.all(np.diag(A) > 0)
    assert np.all(A.sum(axis=1) > 0)
    np.testing.assert_allclose(op_ball.tail, A.sum(axis=1), rtol=1e-10)


def test_constant_is_not_harmonic(op_ball):
    assert np.all(op_ball.matvec(np.ones(op_ball.node_count)) > 0)


def test_interior_maximum(op_ball, ball):
    u = np.exp(-8 * (ball.nodes**2).sum(axis=1))
    i = int(np.argmax(u))
    assert op_ball.matvec(u)[i] > 0


def test_fft_matvec_matches_dense(ball):
    A = assemble(ball, FracParams(0.75, 2))
    rng = np.random.default_rng(1)
    u = rng.standard_normal((ball.node_count, 3))
    fft = A.matvec(u)
    np.testing.assert_allclose(A.dense @ u, fft, rtol=1e-10, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-10, 10))
def test_linearity_and_symmetry(op_interval, seed, c):
    rng = np.random.default_rng(seed)
    n = op_interval.node_count
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    Au, Av = op_interval.matvec(u), op_interval.matvec(v)
    np.testing.assert_allclose(op_interval.matvec(c * u + v), c * Au + Av, rtol=1e-9, atol=1e-9)
    assert np.dot(Au, v) == pytest.approx(np.dot(u, Av), rel=1e-10, abs=1e-9)


def test_apply_field(op_interval, interval):
    out = apply(op_interval, Field(interval, np.zeros(interval.node_count)))
    assert np.all(out.values == 0)
    with pytest.raises(GridMismatch):
        apply(op_interval, Field(build_grid(1, "interval", 1 / 8), np.zeros(15)))


def test_torsion_profile_is_nearly_constant():
    g = build_grid(2, "ball", 1 / 16)
    A = assemble(g, FracParams(0.75, 2))
    w = np.maximum(1 - (g.nodes**2).sum(axis=1), 0) ** 0.75
    Aw = A.matvec(w)[g.delta > 4 * g.h]
    # exact value for the Fourier normalization: 4^s Gamma(1+s)^2 (N=2 ball, |x|^2 profile)
    exact = 4**0.75 * math.gamma(1.75) * math.gamma(1.75)
    assert np.std(Aw) / np.mean(Aw) < 0.1
    assert np.mean(Aw) == pytest.approx(exact, rel=0.05)


def test_calibration_small_modes():
    pts = symbol_calibration(FracParams(0.75, 1), [0, 1, 2], 256)
    assert pts[0].measured == pytest.approx(0.0, abs=1e-9)
    assert pts[0].exact == 0.0
    assert pts[1].exact == 1.0
    assert pts[2].exact == pytest.approx(2**1.5)
    assert pts[2].rel_error < 0.02


def test_calibration_rejects_small_lattice():
    with pytest.raises(ValueError):
        symbol_calibration(FracParams(0.75, 1), [1], 16)


def test_dump_roundtrip(tmp_path, op_interval):
    path = tmp_path / "A.flap"
    op_interval.dump(path)
    np.testing.assert_array_equal(load_dump(path), op_interval.dense)
    raw = path.read_bytes()
    assert raw[:4] == b"FLAP" and len(raw) == 16 + 8 * op_interval.node_count**2


def test_dense_limit():
    g = build_grid(2, "box", 1 / 40)
    A = assemble(g, FracParams(0.75, 2))
    with pytest.raises(MatrixTooLarge):
        A.dense
    assert np.all(A.matvec(np.ones(g.node_count)) > 0)
