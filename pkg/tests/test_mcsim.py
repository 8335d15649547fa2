import math

import numpy as np
import pytest

from wicklab.convergence import CERTIFIED
from wicklab.integrate import ito_pathwise, skorokhod_elementary
from wicklab.mcsim import (
    ADAPTED,
    INSTANTLY_INDEPENDENT,
    DeclaredTypeError,
    EstimatorResult,
    PathEnsemble,
    PathFunctional,
    PathView,
    ak_riemann_sum,
    brownian_functional,
    constant_functional,
    doubling_study,
    estimate_lp,
    estimate_mean,
    eval_gep,
    process_functional,
    refinement_study,
    sample_paths,
    wick_exp_factors,
)
from wicklab.stepfn import Grid, Partition, indicator, inner
from wicklab.wickalg import (
    ElementaryProcess,
    GepElement,
    GridMismatch,
    brownian,
    expect,
    mul,
    wick_exp,
    wiener,
)

UNIT = Grid((0.0, 1.0))


def dyadic_partitions(lo, hi):
    return [Partition.uniform(0.0, 1.0, 2**k) for k in range(lo, hi + 1)]


# -- ensembles

def test_reproducible():
    grid = Grid.uniform(1.0, 8)
    a = sample_paths(grid, 1000, 7).samples
    b = sample_paths(grid, 1000, 7).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_paths(grid, 1000, 8).samples)


def test_prefix_and_block_consistency():
    grid = Grid.uniform(1.0, 4)
    ens = sample_paths(grid, 500, 3)
    assert np.array_equal(ens.with_paths(100).samples, ens.samples[:100])
    assert np.array_equal(ens.block(250, 300), ens.samples[250:300])


@pytest.mark.parametrize("threads", ["1", "4"])
def test_schedule_independent(monkeypatch, threads):
    grid = Grid.uniform(1.0, 4)
    X = wick_exp(grid.step([0.3, -0.2, 0.5, 0.1]), grid)
    ens = sample_paths(grid, 4000, 11)
    monkeypatch.setenv("WICKLAB_THREADS", "1")
    ref = np.concatenate([X.evaluate(ens.block(s, e)) for s, e in ens.block_ranges(4000)])
    monkeypatch.setenv("WICKLAB_THREADS", threads)
    got = ens.map_blocks(X.evaluate, block_size=333)
    assert np.array_equal(got, ref)


def test_sample_paths_rejects_empty():
    with pytest.raises(ValueError):
        sample_paths(UNIT, 0, 1)


def test_brownian_moments():
    Z = sample_paths(UNIT, 10**6, 42).samples[:, 0]
    m = estimate_mean(Z)
    assert abs(m.estimate) <= 3e-3
    v = estimate_mean((Z - Z.mean()) ** 2)
    assert v.agrees(1.0)


def test_per_cell_moments():
    grid = Grid.uniform(2.0, 16)
    Z = sample_paths(grid, 50_000, 5).samples
    se = 1 / math.sqrt(Z.shape[0])
    assert np.all(np.abs(Z.mean(axis=0)) < 4 * se)
    assert np.all(np.abs(Z.var(axis=0) - 1) < 4 * math.sqrt(2) * se)


def test_bridge_refinement_restricts():
    ens = sample_paths(Grid.uniform(1.0, 4), 300, 9)
    fine = ens.refine().refine()
    assert fine.grid == Grid.uniform(1.0, 16)
    dB_coarse = ens.samples * ens.grid.sqrt_dt
    dB_fine = fine.samples * fine.grid.sqrt_dt
    assert np.allclose(dB_fine.reshape(300, 4, 4).sum(axis=2), dB_coarse, atol=1e-13)
    # refined increments are again i.i.d. standard normals
    Z = sample_paths(Grid.uniform(1.0, 4), 20_000, 9).refine().refine().samples
    se = 1 / math.sqrt(Z.size)
    assert abs(Z.mean()) < 3 * se and abs(Z.var() - 1) < 3 * math.sqrt(2) * se
    assert abs(np.corrcoef(Z[:, 0], Z[:, 1])[0, 1]) < 3 / math.sqrt(Z.shape[0])


# -- evaluation

def test_eval_gep_examples():
    grid = Grid.uniform(1.0, 4)
    g = grid.step([0.5, -0.25, 1.0, 0.0])
    ens = sample_paths(grid, 200_000, 13)
    E = eval_gep(wick_exp(g, grid), ens)
    I = eval_gep(wiener(g, grid), ens)
    assert np.allclose(E, np.exp(I - 0.5 * inner(g, g)))
    assert np.all(eval_gep(GepElement.constant(2.5, grid), ens) == 2.5)
    assert estimate_mean(E**2).agrees(math.exp(inner(g, g)))
    with pytest.raises(GridMismatch):
        eval_gep(wick_exp(indicator(0, 1), UNIT), ens)


@pytest.mark.parametrize("seed", range(8))
def test_eval_gep_matches_expect(seed):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(1.0, 3)
    g, h = (grid.step(rng.normal(0, 0.4, 3)) for _ in range(2))
    X = mul(wick_exp(g, grid), wiener(h, grid) + 0.5) + mul(wiener(g, grid), wiener(h, grid))
    r = estimate_mean(eval_gep(X, sample_paths(grid, 100_000, seed)))
    assert r.agrees(expect(X))


# -- estimators

def test_estimate_lp_examples():
    Z = sample_paths(UNIT, 200_000, 1).samples[:, 0]
    assert estimate_lp(Z, 1).agrees(math.sqrt(2 / math.pi))
    c = estimate_lp(np.full(10, -2.5), 3.7)
    assert c.estimate == 2.5 and c.stderr == 0
    g = Grid((0.0, 1 / 3))
    B = sample_paths(g, 10**6, 42).samples[:, 0] * math.sqrt(1 / 3)
    assert estimate_lp(np.exp(B**2), 1).agrees(math.sqrt(3))
    assert estimate_lp(np.exp(B**2), 1, method="mom").agrees(math.sqrt(3))


def test_estimate_lp_errors():
    with pytest.raises(ValueError):
        estimate_lp(np.array([]), 1)
    with pytest.raises(ValueError):
        estimate_lp(np.ones(3), 0)
    with pytest.raises(ValueError):
        estimate_lp(np.arange(3.0), 1, method="bogus")


def test_estimator_csv_row():
    r = EstimatorResult(1.5, 0.25, 100)
    assert r.csv_row(seed=7) == "1.5,0.25,100,7"
    lo, hi = r.interval()
    assert lo < 1.5 < hi and hi - 1.5 == pytest.approx(r.z * 0.25)


def test_doubling_study_flags_only_infinite_mean():
    g = Grid((0.0, 1.0))
    Z = sample_paths(g, 2**20, 42).samples[:, 0]
    finite = doubling_study(np.exp((1 / 3) * Z**2))
    infinite = doubling_study(np.exp(0.51 * Z**2))
    assert not finite.flagged
    assert infinite.flagged
    with pytest.raises(ValueError):
        doubling_study(Z[:2000])


# -- path functionals and Riemann sums

def test_path_view():
    grid = Grid.uniform(1.0, 4)
    Z = sample_paths(grid, 10, 3).samples
    w = PathView(grid, Z)
    assert np.allclose(w.at(1.0), (Z * 0.5).sum(axis=1))
    assert np.allclose(w.increment(0.25, 0.75), (Z[:, 1:3] * 0.5).sum(axis=1))
    g = grid.step([1, 2, 3, 4])
    assert np.allclose(w.wiener_upto(g, 0.5) + w.wiener_from(g, 0.5), wiener(g, grid).evaluate(Z))
    with pytest.raises(ValueError):
        w.at(0.3)


def test_ito_riemann_sum_matches_ito_pathwise():
    grid = Grid.uniform(1.0, 16)
    ens = sample_paths(grid, 2000, 21)
    S = ak_riemann_sum(brownian_functional(), constant_functional(1.0), Partition.uniform(0, 1, 16), ens)
    summands = tuple((brownian(t0, grid), grid.cell_indicator(i)) for i, (t0, _) in enumerate(grid.cells()) if t0 > 0)
    u = ElementaryProcess(grid, summands)
    assert np.allclose(S, ito_pathwise(u, ens.samples), atol=1e-12, rtol=0)
    assert np.allclose(S, skorokhod_elementary(u).evaluate(ens.samples), atol=1e-12, rtol=0)


def test_process_functional_matches_ito():
    rng = np.random.default_rng(2)
    grid = Grid.uniform(1.0, 8)
    summands = tuple((brownian(grid.times[i], grid).scale(rng.normal()) + rng.normal(), grid.cell_indicator(i))
                     for i in range(grid.m))
    u = ElementaryProcess(grid, summands)
    ens = sample_paths(grid, 500, 4)
    S = ak_riemann_sum(process_functional(u), constant_functional(1.0), Partition(grid.times), ens)
    assert np.allclose(S, ito_pathwise(u, ens.samples), atol=1e-12)


def test_telescoping_example():
    # integrand B_1 split as 1 * (B_1 - B_t) + B_t * 1
    grid = Grid.uniform(1.0, 64)
    ens = sample_paths(grid, 5000, 8)
    part = Partition(grid.times)
    phi = PathFunctional(lambda t, w: w.at(1.0) - w.at(t), INSTANTLY_INDEPENDENT, "B_1 - B_t")
    S = (ak_riemann_sum(constant_functional(1.0, ADAPTED), phi, part, ens)
         + ak_riemann_sum(brownian_functional(), constant_functional(1.0), part, ens))
    dB = ens.samples * grid.sqrt_dt
    B1 = dB.sum(axis=1)
    assert np.allclose(S, B1**2 - (dB**2).sum(axis=1), atol=1e-12)
    target = mul(brownian(1.0, grid), brownian(1.0, grid)) - 1.0
    assert estimate_mean((S - target.evaluate(ens.samples)) ** 2).estimate < 0.05


def test_wick_exp_riemann_sum_converges():
    g = h = indicator(0, 1)
    f, phi = wick_exp_factors(g, h)
    grid = Grid.uniform(1.0, 256)
    ens = sample_paths(grid, 20_000, 17)
    target = mul(wick_exp(g, grid), wiener(h, grid) - inner(g, h)).evaluate(ens.samples)
    dists = [estimate_mean((ak_riemann_sum(f, phi, Partition.uniform(0, 1, 2**k), ens) - target) ** 2).estimate
             for k in (2, 4, 6, 8)]
    assert all(b < a for a, b in zip(dists, dists[1:]))


def test_declared_type_spot_check():
    grid = Grid.uniform(1.0, 8)
    ens = sample_paths(grid, 100, 1)
    part = Partition(grid.times)
    cheat = PathFunctional(lambda t, w: w.at(1.0), ADAPTED, "B_1")
    with pytest.raises(DeclaredTypeError):
        ak_riemann_sum(cheat, constant_functional(1.0), part, ens)
    peek = PathFunctional(lambda t, w: w.at(t), INSTANTLY_INDEPENDENT, "B_t")
    with pytest.raises(DeclaredTypeError):
        ak_riemann_sum(brownian_functional(), peek, part, ens)
    with pytest.raises(DeclaredTypeError):
        ak_riemann_sum(constant_functional(1.0), constant_functional(1.0), part, ens)
    with pytest.raises(ValueError):
        ak_riemann_sum(brownian_functional(), constant_functional(1.0), Partition.uniform(0, 1, 3), ens)


# -- refinement studies

def test_ito_refinement_certified():
    ens = sample_paths(Grid.uniform(1.0, 16), 20_000, 42)
    rep = refinement_study(brownian_functional(), constant_functional(1.0), dyadic_partitions(4, 10), ens, eps=0.1)
    assert rep.definition == "D2.1" and rep.verdict == CERTIFIED
    limit = rep.limit
    # (B_1^2 - 1) / 2 has mean 0 and standard deviation 1/sqrt(2)
    assert abs(limit["mean"]) <= 3 * limit["stderr"]
    assert limit["std"] == pytest.approx(1 / math.sqrt(2), rel=0.03)


def test_zero_refinement_certified():
    ens = sample_paths(Grid.uniform(1.0, 4), 1000, 1)
    zero = constant_functional(0.0)
    rep = refinement_study(constant_functional(0.0, ADAPTED), zero, dyadic_partitions(2, 5), ens, eps=1e-2)
    assert rep.verdict == CERTIFIED and rep.limit["mean"] == 0


def test_refinement_reference_distance():
    g = h = indicator(0, 1)
    f, phi = wick_exp_factors(g, h)
    ens = sample_paths(Grid.uniform(1.0, 4), 20_000, 3)
    fine = Grid.uniform(1.0, 64)
    ref = mul(wick_exp(g, fine), wiener(h, fine) - 1.0)
    rep = refinement_study(f, phi, dyadic_partitions(2, 6), ens, eps=0.5, reference=ref)
    d = rep.limit["l2_distance"]
    assert len(d) == 5 and all(b < a for a, b in zip(d, d[1:]))


def test_refinement_study_errors():
    ens = sample_paths(Grid.uniform(1.0, 4), 100, 1)
    parts = dyadic_partitions(2, 3)
    with pytest.raises(ValueError):
        refinement_study(brownian_functional(), constant_functional(1.0), parts, ens, eps=0.1)
    with pytest.raises(ValueError):
        refinement_study(brownian_functional(), constant_functional(1.0),
                         [parts[1], parts[0], parts[1]], ens, eps=0.1)


def test_ensemble_dataclass_validation():
    with pytest.raises(ValueError):
        PathEnsemble(UNIT, 0, 1)
