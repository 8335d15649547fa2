import json
import math

import numpy as np
import pytest
from conftest import LATTICE, step_functions
from hypothesis import given
from hypothesis import strategies as st

from wicklab.stepfn import (
    Grid,
    Partition,
    StepFunction,
    common_grid,
    indicator,
    inner,
    make_step,
    restrict_after,
    restrict_before,
)


def pointwise_sum(pieces, x):
    return sum(v for lo, hi, v in pieces if lo < x <= hi)


# -- make_step

def test_single_indicator():
    assert make_step([(0, 1, 1)]).intervals == ((0.0, 1.0, 1.0),)


def test_overlap_cancels():
    assert make_step([(0, 2, 1), (1, 2, -1)]) == indicator(0, 1)


def test_empty_is_zero():
    f = make_step([])
    assert f.is_zero() and f.intervals == ()


@pytest.mark.parametrize("bad", [[(-1, 1, 1)], [(1, 1, 1)], [(2, 1, 1)], [(0, 1, math.nan)], [(0, math.inf, 1)]])
def test_make_step_rejects(bad):
    with pytest.raises(ValueError):
        make_step(bad)


def test_adjacent_equal_values_merge():
    assert make_step([(0, 1, 2), (1, 3, 2)]).intervals == ((0.0, 3.0, 2.0),)


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(1, 8), st.integers(-3, 3)), max_size=6))
def test_make_step_matches_pointwise_sum(raw):
    pieces = [(lo / 8, (lo + w) / 8, float(v)) for lo, w, v in raw]
    f = make_step(pieces)
    xs = (np.arange(200) + 0.5) * 3 / 200
    assert np.allclose([f(x) for x in xs], [pointwise_sum(pieces, x) for x in xs])


@given(step_functions())
def test_canonical_form_invariants(f):
    iv = f.intervals
    assert all(hi > lo for lo, hi, _ in iv)
    assert all(a[1] <= b[0] for a, b in zip(iv, iv[1:]))
    assert all(v != 0 for *_, v in iv)
    assert all(not (a[1] == b[0] and a[2] == b[2]) for a, b in zip(iv, iv[1:]))
    assert make_step(iv) == f


def test_callable_uses_left_open_intervals():
    f = indicator(0, 1)
    assert f(0) == 0 and f(1) == 1 and f(1.0000001) == 0


def test_arithmetic():
    f = indicator(0, 2)
    g = indicator(1, 3, 3.0)
    assert (f + g)(1.5) == 4 and (f - g)(2.5) == -3 and (2 * f)(1) == 2
    assert (f - f).is_zero()


def test_json_roundtrip():
    f = make_step([(0, 1, 2.5), (2, 3, -1)])
    text = json.dumps(f.to_json())
    assert StepFunction.from_json(text) == f
    assert StepFunction.from_json([[0, 1, 2.5], [2, 3, -1]]) == f


def test_repr():
    assert repr(make_step([(0, 2, 1), (1, 2, -1)])) == "StepFunction(1*1(0,1])"


# -- inner

def test_inner_examples():
    assert inner(indicator(0, 1), indicator(0, 1, 2)) == 2
    assert inner(indicator(0, 1), indicator(1, 2)) == 0
    assert inner(indicator(0, 2), indicator(1, 3, 3)) == 3


@given(step_functions(), step_functions())
def test_inner_matches_quadrature(f, g):
    # exact midpoint rule on the 1/8 lattice
    xs = (np.arange(16) + 0.5) / LATTICE
    quad = sum(f(x) * g(x) for x in xs) / LATTICE
    assert inner(f, g) == pytest.approx(quad, abs=1e-12)


@given(step_functions(), step_functions(), step_functions(), st.floats(-2, 2))
def test_inner_symmetric_bilinear(f, g, h, c):
    assert inner(f, g) == pytest.approx(inner(g, f))
    assert inner(f + g * c, h) == pytest.approx(inner(f, h) + c * inner(g, h), abs=1e-9)


@given(step_functions(), step_functions())
def test_cauchy_schwarz(f, g):
    assert inner(f, g) ** 2 <= inner(f, f) * inner(g, g) * (1 + 1e-12) + 1e-12


# -- restrictions

def test_restrict_examples():
    g = indicator(0, 2)
    assert restrict_before(g, 1) == indicator(0, 1)
    assert restrict_after(g, 1) == indicator(1, 2)
    assert restrict_before(g, 0).is_zero() and restrict_after(g, 0) == g
    assert restrict_before(g, 5) == g and restrict_after(g, 5).is_zero()
    with pytest.raises(ValueError):
        restrict_before(g, -1)


@given(step_functions(), st.integers(0, 20))
def test_restrictions_split_norm(g, k):
    t = k / LATTICE
    a, b = restrict_before(g, t), restrict_after(g, t)
    assert inner(a, b) == 0
    assert inner(g, g) == pytest.approx(inner(a, a) + inner(b, b), abs=1e-12)
    assert (a + b) == g


# -- grids and partitions

def test_common_grid_examples():
    assert common_grid([indicator(0, 1)], 1).times == (0.0, 1.0)
    assert common_grid([indicator(0, 1), indicator(0.5, 2)], 2).times == (0.0, 0.5, 1.0, 2.0)
    assert common_grid([], 1).times == (0.0, 1.0)
    with pytest.raises(ValueError):
        common_grid([indicator(0, 2)], 1)


@given(st.lists(step_functions(), max_size=4))
def test_common_grid_resolves_inputs(fs):
    grid = common_grid(fs, 2.0)
    for f in fs:
        assert grid.resolves(f)
        for a, b in grid.cells():
            # constant on each cell: sample two interior points
            assert f(a + 0.25 * (b - a)) == f(a + 0.75 * (b - a))
        assert grid.step(grid.cell_values(f)) == f


def test_grid_validation():
    for bad in [(0.0,), (0.5, 1.0), (0.0, 1.0, 1.0)]:
        with pytest.raises(ValueError):
            Grid(bad)
    g = Grid.dyadic(1, 3)
    assert g.m == 8 and g.horizon == 1 and np.allclose(g.dt, 1 / 8)
    assert g.refine() == Grid.dyadic(1, 4)
    with pytest.raises(ValueError):
        g.index_of(0.3)
    with pytest.raises(ValueError):
        g.cell_values(indicator(0, 0.3))


def test_partition():
    p = Partition.uniform(0, 1, 4)
    assert p.mesh == 0.25 and p.refine().refines(p) and not p.refines(p.refine())
    with pytest.raises(ValueError):
        Partition((0.0, 0.0))
