import numpy as np
import pytest
from scipy.interpolate import BSpline

from wavepat.assembly import ProblemConfig, assemble_system


def scipy_basis(space, x, deriv=0):
    """Active basis (or a derivative) at ``x`` via scipy's BSpline, as ``[len(x), dim]``."""
    x = np.asarray(x, dtype=float)
    p = space.degree
    out = np.empty((x.size, space.dim))
    for col, i in enumerate(space.active):
        c = np.zeros(space.n_full)
        c[i] = 1.0
        b = BSpline(space.knots, c, p, extrapolate=True)
        out[:, col] = b.derivative(deriv)(x) if deriv else b(x)
    return out


def span_gauss(breaks, npts):
    g, w = np.polynomial.legendre.leggauss(npts)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        xs.append(0.5 * (b - a) * g + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(xs), np.concatenate(ws)


@pytest.fixture(scope="session")
def system_l2():
    return assemble_system(ProblemConfig(d=2, level_t=2, level_x=2))


@pytest.fixture(scope="session")
def system_l1():
    return assemble_system(ProblemConfig(d=2, level_t=1, level_x=1, alpha=0.3, rho=0.7))


ACCEPTANCE = []


@pytest.fixture
def accept():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
