from __future__ import annotations

import numpy as np
import pytest

from qpscatter.geometry import LayerStack, fourier_interface
from qpscatter.solver import QPSolver, SolverParams

OMEGA_SMALL = (5.0, 5.0 * np.sqrt(2.0), 5.0)


def small_stack(omegas=OMEGA_SMALL) -> LayerStack:
    g1 = fourier_interface([0.1], "sin", offset=0.0)
    g2 = fourier_interface([0.1, 0.03], "cos", offset=-0.6)
    return LayerStack(1.0, omegas, (g1, g2))


@pytest.fixture(scope="session")
def small_solver():
    """Three-layer smooth stack with 160 nodes per interface (precomputed)."""
    s = QPSolver(small_stack(), SolverParams(panels=10))
    s.precompute()
    return s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


OMEGA_ACC = (10.0, 10.0 * np.sqrt(2.0), 10.0)
THETA_ACC = -np.pi / 4


def acceptance_stack(period: float = 1.0) -> LayerStack:
    """Three-layer stack with random (seeded) 30-mode sine interfaces."""
    from qpscatter.geometry import random_fourier_interface

    g1 = random_fourier_interface(1, offset=0.0, period=period)
    g2 = random_fourier_interface(2, offset=-1.0, period=period)
    return LayerStack(period, OMEGA_ACC, (g1, g2))


_ACC_CACHE: dict = {}


def acceptance_solve(panels: int):
    """Solver and result for the acceptance stack at ``16 * panels`` nodes per interface (cached)."""
    if panels not in _ACC_CACHE:
        s = QPSolver(acceptance_stack(), SolverParams(panels=panels))
        s.precompute()
        _ACC_CACHE[panels] = (s, s.solve(THETA_ACC))
    return _ACC_CACHE[panels]


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
