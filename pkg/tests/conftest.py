import numpy as np
import pytest

from pintoc.heat_core import Grid
from pintoc.optimal_control import make_problem


def random_problem(n=3, M=8, T=None, alpha=1e-2, nu=1e-2, seed=0):
    """Small problem with random initial state and target."""
    rng = np.random.default_rng(seed)
    size = Grid(n, n).size
    return make_problem(
        n, T=M * 1e-2 if T is None else T, M=M, alpha=alpha, nu=nu,
        y0=rng.standard_normal(size), y_target=rng.standard_normal(size),
    )


def smooth_problem(n=9, M=64, T=0.64, alpha=1e-2, nu=1e-2):
    """Sine initial state driven towards a centred Gaussian."""
    grid = Grid(n, n)
    x, y = grid.coords
    y0 = np.sin(np.pi * x) * np.sin(np.pi * y)
    target = np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / (2 * 0.1**2))
    return make_problem(n, T=T, M=M, alpha=alpha, nu=nu, y0=y0, y_target=target)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pb3():
    """3x3 grid, 8 steps."""
    return random_problem(3, 8)


@pytest.fixture
def pb2():
    """2x2 grid, 4 steps."""
    return random_problem(2, 4, seed=7)


ACCEPTANCE_LINES = []


def report(criterion: int, ok: bool, detail: str):
    """Record and print one acceptance verdict."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
