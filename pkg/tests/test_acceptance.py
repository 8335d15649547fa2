"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test records a ``criterion n: PASS|FAIL ...`` line in ``RESULTS``; the
lines are printed as they are produced and again in the terminal summary.
Criteria that cannot be met fail here with the measured numbers.
"""

import math
import time

import numpy as np

from wicklab.convergence import CERTIFIED, REFUTED
from wicklab.integrate import (
    certify_strong_convergence,
    closure_ayedkuo,
    closure_skorokhod,
    duality_gap,
    ito_pathwise,
    s_residual,
    skorokhod_elementary,
)
from wicklab.mcsim import doubling_study, estimate_mean, eval_gep, sample_paths
from wicklab.paperlab import (
    run_scenario,
    stated_abs_bound,
    vn_integral_stated,
    vn_process,
)
from wicklab.stepfn import Grid, indicator, inner
from wicklab.wickalg import (
    ElementaryProcess,
    GepElement,
    brownian,
    hermite_element,
    max_coeff_diff,
    moment,
    mul,
    power,
    s_transform,
    wick_exp,
    wick_exp_taylor,
    wick_mul,
    wiener,
)

RESULTS: dict[int, str] = {}
T3 = 1 / 3


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[n] = line
    print(line)
    assert ok, line


def rand_grid(rng, max_cells):
    m = int(rng.integers(1, max_cells + 1))
    return Grid.uniform(float(rng.uniform(0.5, 2.0)), m)


def rand_step(rng, grid, scale=1.0):
    # keep the L2 norm of order `scale` whatever the number of cells
    vals = rng.normal(0, scale, grid.m) * (rng.random(grid.m) < 0.7)
    return grid.step(vals / math.sqrt(grid.horizon))


def rand_process(rng, grid, adapted=False):
    summands = []
    for _ in range(int(rng.integers(1, 4))):
        i = int(rng.integers(0, grid.m))
        if adapted:
            t = grid.times[i]
            past = grid.step(np.where(np.arange(grid.m) < i, rng.normal(0, 0.5, grid.m), 0.0))
            kind = rng.integers(3)
            F = (wick_exp(past, grid), mul(brownian(t, grid), brownian(t, grid)) + 1.0,
                 mul(wiener(past, grid), wick_exp(past * 0.5, grid)))[kind]
            summands.append((F, grid.cell_indicator(i) * float(rng.normal())))
        else:
            g = rand_step(rng, grid, 0.6)
            kind = rng.integers(3)
            F = (wick_exp(g, grid), power(wiener(g, grid), 2) - 0.5,
                 mul(wiener(rand_step(rng, grid, 0.6), grid), wick_exp(g, grid)))[kind]
            summands.append((F, rand_step(rng, grid)))
    return ElementaryProcess(grid, tuple(summands))


def test_criterion_01_s_transform_generator():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        grid = rand_grid(rng, 64)
        f, g = rand_step(rng, grid), rand_step(rng, grid)
        worst = max(worst, abs(s_transform(wick_exp(f, grid), g) - math.exp(inner(f, g))))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-12 and elapsed < 1.0, f"max error {worst:.2e} <= 1e-12, {elapsed:.2f} s < 1 s")


def test_criterion_02_skorokhod_characterization():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = closed = 0.0
    for _ in range(100):
        grid = rand_grid(rng, 6)
        u = rand_process(rng, grid)
        d = skorokhod_elementary(u)
        for _ in range(20):
            worst = max(worst, abs(s_residual(d, u, rand_step(rng, grid))))
        # Wick-exponential tensor: S(δu)(v) = e^<g,v> <v,h>
        g, h = rand_step(rng, grid, 0.6), rand_step(rng, grid)
        dg = skorokhod_elementary(ElementaryProcess.wick_exp_tensor(g, h, grid))
        for _ in range(5):
            v = rand_step(rng, grid)
            closed = max(closed, abs(s_transform(dg, v) - math.exp(inner(g, v)) * inner(v, h)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and closed <= 1e-10 and elapsed < 5.0
    record(2, ok, f"max residual {worst:.2e}, closed-form gap {closed:.2e} <= 1e-10, {elapsed:.2f} s < 5 s")


def test_criterion_03_moment_formula():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(25):
        grid = rand_grid(rng, 16)
        g = rand_step(rng, grid)
        E = wick_exp(g, grid)
        for p in (1, 2, 3, 4):
            want = math.exp((p * p - p) / 2 * inner(g, g))
            worst = max(worst, abs(moment(E, p) - want) / want)
    elapsed = time.perf_counter() - start
    record(3, worst <= 1e-10 and elapsed < 1.0, f"max relative error {worst:.2e} <= 1e-10, {elapsed:.2f} s < 1 s")


def test_criterion_04_square_exponential_moments():
    start = time.perf_counter()
    Z = sample_paths(Grid((0.0, 1.0)), 10**6, 42).samples[:, 0]
    est = estimate_mean(np.exp(T3 * Z**2))
    flag = doubling_study(np.exp(0.51 * Z**2))
    elapsed = time.perf_counter() - start
    z = (est.estimate - math.sqrt(3)) / est.stderr
    ok = est.agrees(math.sqrt(3)) and flag.flagged and elapsed < 30.0
    record(4, ok, f"E[exp(B_1/3^2)] = {est.estimate:.5f} +- {est.stderr:.5f} ({z:+.2f} SE from sqrt 3); "
                  f"t=0.51 divergence flag {flag.flagged} (growth {flag.growth:.3f}); {elapsed:.1f} s < 30 s")


def test_criterion_05_exponential_series_integral():
    start = time.perf_counter()
    grid = Grid((0.0, T3))
    sym = [max_coeff_diff(skorokhod_elementary(vn_process(n, grid)), vn_integral_stated(n, grid)) for n in range(9)]
    sym_ok = max(sym) <= 1e-9

    paths = sample_paths(grid, 100_000, 42)
    bound_fail = []
    for n in range(9):
        est = estimate_mean(np.abs(eval_gep(skorokhod_elementary(vn_process(n, grid)), paths)))
        if est.estimate - 3 * est.stderr > stated_abs_bound(n):
            bound_fail.append(f"n={n}: {est.estimate:.4f} vs {stated_abs_bound(n):.4f}")
    bound_ok = not bound_fail

    seq = [vn_process(n, grid) for n in range(16)]
    verdicts = {
        "D3.7 p=1": closure_skorokhod(seq, 1.0, paths).verdict,
        "D3.10 p=1": closure_ayedkuo(seq, 1.0, paths).verdict,
        "D3.7 p=2": closure_skorokhod(seq, 2.0, paths).verdict,
        "D3.10 p=2": closure_ayedkuo(seq, 2.0, paths).verdict,
    }
    closure_ok = all(v == CERTIFIED for k, v in verdicts.items() if "p=1" in k) and \
        all(v == REFUTED for k, v in verdicts.items() if "p=2" in k)
    elapsed = time.perf_counter() - start
    ok = sym_ok and bound_ok and closure_ok and elapsed < 60.0
    record(5, ok, f"symbolic identity max gap {max(sym):.3g} (n=0 gap {sym[0]:.3g}) vs 1e-9: "
                  f"{'ok' if sym_ok else 'fails'}; stated |δ| bound: "
                  f"{'ok' if bound_ok else 'exceeded at ' + ', '.join(bound_fail[:3]) + ', ...'}; "
                  f"closures {verdicts}: {'ok' if closure_ok else 'mismatch'}; {elapsed:.1f} s < 60 s")


def test_criterion_06_riemann_sum_distance():
    start = time.perf_counter()
    rep = run_scenario("theorem-2-3", mesh_levels=tuple(range(4, 11)), n_paths=100_000, seed=42, symbolic_max=0)
    d = rep.summary["l2_distance"]
    se = rep.summary["l2_distance_stderr"]
    elapsed = time.perf_counter() - start
    decreasing = all(b <= a + 3 * math.hypot(sa, sb) for a, b, sa, sb in zip(d, d[1:], se, se[1:]))
    small = d[-1] - 3 * se[-1] <= 5e-2
    ok = decreasing and small and elapsed < 60.0
    record(6, ok, f"L2 distances {np.round(d, 4).tolist()} decreasing {decreasing}; "
                  f"finest {d[-1]:.4f} +- {se[-1]:.4f} vs 5e-2: {'ok' if small else 'above'}; {elapsed:.1f} s < 60 s")


def test_criterion_07_ito_consistency():
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(50):
        grid = rand_grid(rng, 8)
        u = rand_process(rng, grid, adapted=True)
        Z = sample_paths(grid, 500, k).samples
        worst = max(worst, float(np.max(np.abs(skorokhod_elementary(u).evaluate(Z) - ito_pathwise(u, Z)))))
    record(7, worst <= 1e-12, f"max pathwise gap {worst:.2e} <= 1e-12 over 50 processes x 500 paths")


def test_criterion_08_malliavin_duality():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        grid = rand_grid(rng, 5)
        g, k = rand_step(rng, grid, 0.6), rand_step(rng, grid)
        F = mul(wick_exp(g, grid), wiener(k, grid)) + power(wiener(k, grid), 2) + float(rng.normal())
        worst = max(worst, abs(duality_gap(F, rand_process(rng, grid))))
    record(8, worst <= 1e-10, f"max |E[F δ(u)] - E∫u DF| = {worst:.2e} <= 1e-10")


def test_criterion_09_wick_structure():
    rng = np.random.default_rng(9)
    worst_w = worst_m = 0.0
    for _ in range(50):
        grid = rand_grid(rng, 8)
        g, v = rand_step(rng, grid), rand_step(rng, grid)
        Eg, Ev, Egv = wick_exp(g, grid), wick_exp(v, grid), wick_exp(g + v, grid)
        worst_w = max(worst_w, max_coeff_diff(wick_mul(Eg, Ev), Egv))
        worst_m = max(worst_m, max_coeff_diff(mul(Eg, Ev), Egv.scale(math.exp(inner(g, v)))) / math.exp(inner(g, v)))
    worst_t = 0.0
    for t in (0.25, T3, 1.0):
        grid = Grid((0.0, t))
        one = indicator(0, t)
        for l in range(11):
            worst_t = max(worst_t, max_coeff_diff(wick_exp_taylor(one, grid, l), hermite_element(l, one, grid)))
    ok = worst_w <= 1e-12 and worst_m <= 1e-12 and worst_t <= 1e-12
    record(9, ok, f"wick_mul gap {worst_w:.1e}, mul gap {worst_m:.1e}, Taylor-Hermite gap (l<=10) {worst_t:.1e}")


def _harness_runs():
    grid = Grid.uniform(1.0, 16)
    f = [grid.cell_indicator(n) * 4.0 for n in range(16)]
    ortho = certify_strong_convergence([wiener(fn, grid) for fn in f], GepElement.zero(grid), 2.0,
                                       [indicator(0, 0.25), indicator(0, 0.5, -1.0)])
    g = grid.step(np.linspace(-0.5, 0.5, 16))
    k = grid.step(np.cos(np.arange(16)))
    tests = [grid.cell_indicator(i) for i in range(0, 16, 2)] + [indicator(0, 1)]
    wexp = certify_strong_convergence([wick_exp(g + k * 2.0**-n, grid) for n in range(24)], wick_exp(g, grid),
                                      2.0, tests)
    paths = sample_paths(grid, 20_000, 42)
    ortho3 = certify_strong_convergence([wiener(fn, grid) for fn in f], GepElement.zero(grid), 3.0,
                                        [indicator(0, 0.25)], paths=paths)
    return ortho, wexp, ortho3


def test_criterion_10_strong_convergence_harness():
    first = _harness_runs()
    second = _harness_runs()
    ortho, wexp, ortho3 = first
    deterministic = all(a.to_dict() == b.to_dict() for a, b in zip(first, second))
    ok = ortho.verdict != CERTIFIED and ortho3.verdict != CERTIFIED and wexp.verdict == CERTIFIED and deterministic
    record(10, ok, f"orthonormal I(f_n): {ortho.verdict} (p=2), {ortho3.verdict} (p=3, MC); "
                   f"wick_exp(g_n): {wexp.verdict}; repeat runs identical {deterministic}")


def test_criterion_11_extension_ordering():
    cases = []
    g2 = Grid.uniform(1.0, 2)
    u = ElementaryProcess.wick_exp_tensor(g2.step([0.5, -0.5]), indicator(0, 1), g2)
    cases += [("constant wick_exp, p=1", [u] * 5, 1.0, sample_paths(g2, 5000, 1)),
              ("constant wick_exp, p=2", [u] * 5, 2.0, sample_paths(g2, 5000, 1))]
    slow = [ElementaryProcess.single(GepElement.constant(1 + 0.02 / (n + 1), g2), indicator(0, 1)) for n in range(6)]
    cases.append(("deterministic 1 + 0.02/(n+1), p=2", slow, 2.0, sample_paths(g2, 5000, 2)))
    g3 = Grid((0.0, T3))
    cases.append(("v^n, p=1", [vn_process(n, g3) for n in range(16)], 1.0, sample_paths(g3, 100_000, 42)))

    bad = []
    for name, seq, p, paths in cases:
        s = closure_skorokhod(seq, p, paths)
        if s.verdict != CERTIFIED:
            bad.append(f"{name}: skorokhod closure {s.verdict}")
            continue
        a = closure_ayedkuo(seq, p, paths)
        gap = abs(s.limit["mean"] - a.limit["mean"])
        se = math.hypot(s.limit["stderr"], a.limit["stderr"])
        if a.verdict != CERTIFIED or gap > 3 * se + 1e-12:
            bad.append(f"{name}: ayed-kuo closure {a.verdict}, mean gap {gap:.3g} vs 3 SE {3 * se:.3g}")
    record(11, not bad, f"{len(cases)} certified sequences checked" + ("; " + "; ".join(bad) if bad else ""))
