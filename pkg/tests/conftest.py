import numpy as np
import pytest

from chorinfd.grid import Ball, Box, LShape, build_grid
from chorinfd.stepper import RunConfig, run
from chorinfd.testfunctions import default_dictionary

BUMP = {"kind": "solenoidal_bump", "center": 0.5, "radius": 0.25, "axis": [1.0, 1.0, 1.0], "amplitude": 1.0}
SWIRL = {"kind": "decaying_swirl", "center": 0.5, "radius": 0.25, "axis": [0.0, 0.0, 1.0], "amplitude": 1.0, "rate": 1.0}


def acceptance_config(h=1.0 / 16, **kw):
    """Unit box, alpha = 2, T = 1/4, bump initial data and decaying swirl force."""
    base = dict(domain=Box(), h=h, T=0.25, alpha=2.0, initial=dict(BUMP), force=dict(SWIRL))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def box16():
    return build_grid(Box(), 1.0 / 16)


@pytest.fixture(scope="session")
def small_grids():
    """Box, ball and L-shape grids small enough for dense solves."""
    return {
        "box": build_grid(Box(), 1.0 / 12),
        "ball": build_grid(Ball((0.0, 0.0, 0.0), 1.0), 1.0 / 8),
        "lshape": build_grid(LShape(), 1.0 / 16),
    }


@pytest.fixture(scope="session")
def acceptance_run():
    return run(acceptance_config())


@pytest.fixture(scope="session")
def dictionary():
    return default_dictionary()


@pytest.fixture(scope="session")
def dictionary_T():
    return default_dictionary(T=0.25)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def record_criterion(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
