from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fkpz.fraclap import FracParams, assemble  # noqa: E402
from fkpz.grid import build_grid  # noqa: E402
from fkpz.heatkernel import eigendecompose  # noqa: E402


@pytest.fixture(scope="session")
def interval():
    return build_grid(1, "interval", 1 / 32)


@pytest.fixture(scope="session")
def ball():
    return build_grid(2, "ball", 1 / 8)


@pytest.fixture(scope="session")
def ball16():
    return build_grid(2, "ball", 1 / 16)


@pytest.fixture(scope="session")
def op_interval(interval):
    return assemble(interval, FracParams(0.75, 1))


@pytest.fixture(scope="session")
def op_ball(ball):
    return assemble(ball, FracParams(0.75, 2))


@pytest.fixture(scope="session")
def op_ball16(ball16):
    return assemble(ball16, FracParams(0.75, 2))


@pytest.fixture(scope="session")
def K_ball(op_ball):
    return eigendecompose(op_ball)


@pytest.fixture(scope="session")
def K_ball16(op_ball16):
    return eigendecompose(op_ball16)


@pytest.fixture(scope="session")
def K_interval(op_interval):
    return eigendecompose(op_interval)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail, elapsed = RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail} [{elapsed:.1f}s]")
