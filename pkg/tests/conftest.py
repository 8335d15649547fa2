import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from wicklab.stepfn import Grid, make_step

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LATTICE = 8  # breakpoints on multiples of 1/8 in [0, 2]


@st.composite
def step_functions(draw, max_pieces=4, horizon_cells=2 * LATTICE):
    n = draw(st.integers(0, max_pieces))
    pieces = []
    for _ in range(n):
        lo = draw(st.integers(0, horizon_cells - 1))
        hi = draw(st.integers(lo + 1, horizon_cells))
        v = draw(st.floats(-3, 3, allow_nan=False).filter(lambda x: abs(x) > 1e-3))
        pieces.append((lo / LATTICE, hi / LATTICE, v))
    return make_step(pieces)


@st.composite
def grids(draw, max_cells=5):
    cells = draw(st.lists(st.integers(1, 4), min_size=1, max_size=max_cells))
    times = np.concatenate([[0], np.cumsum(cells)]) / LATTICE
    return Grid(tuple(times))


@st.composite
def grid_steps(draw, grid, scale=1.0):
    vals = draw(st.lists(st.floats(-scale, scale, allow_nan=False), min_size=grid.m, max_size=grid.m))
    return grid.step(vals)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k)):
        terminalreporter.write_line(results[key])
