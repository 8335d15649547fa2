"""Named reproduction scenarios.

Each scenario runs the algebra and the Monte Carlo engine on one worked
example and returns a :class:`ScenarioReport`: one :class:`Check` per expected
output, each tagged with where the expected value comes from (``PAPER`` for
published closed forms, ``DERIVED`` for independent oracles, ``TRIVIAL`` for
sanity values), plus the convergence reports of the drivers involved and an
``errata`` list for published finite-n statements that do not hold.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .convergence import CERTIFIED, REFUTED, Thresholds, _jsonable
from .integrate import (
    ElementaryProcess,
    certify_strong_convergence,
    closure_ayedkuo,
    closure_skorokhod,
    duality_gap,
    s_residual,
    skorokhod_elementary,
)
from .mcsim import (
    ADAPTED,
    INSTANTLY_INDEPENDENT,
    PathFunctional,
    ak_riemann_sum,
    doubling_study,
    estimate_mean,
    eval_gep,
    refinement_study,
    sample_paths,
    wick_exp_factors,
)
from .stepfn import (
    Grid,
    Partition,
    StepFunction,
    indicator,
    inner,
    restrict_after,
    restrict_before,
)
from .wickalg import (
    GepElement,
    allclose,
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
    wick_power,
    wiener,
)

PAPER, DERIVED, TRIVIAL = "PAPER", "DERIVED", "TRIVIAL"
CSV_COLUMNS = ("scenario", "quantity", "estimate", "stderr", "expected", "provenance", "pass")
SYM_TOL = 1e-10
N_SE = 3.0


@dataclass
class Check:
    quantity: str
    estimate: float | str
    expected: float | str
    provenance: str
    passed: bool
    stderr: float = 0.0
    tolerance: str = ""
    note: str = ""


@dataclass
class ScenarioReport:
    scenario: str
    params: dict
    checks: list[Check] = field(default_factory=list)
    reports: list[dict] = field(default_factory=list)
    errata: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, quantity, estimate, expected, provenance, passed, stderr=0.0, tolerance="", note=""):
        self.checks.append(Check(quantity, estimate, expected, provenance, bool(passed), float(stderr), tolerance, note))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return _jsonable(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, **kw)

    def csv_rows(self) -> list[list]:
        return [[self.scenario, c.quantity, c.estimate, c.stderr, c.expected, c.provenance, c.passed]
                for c in self.checks]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(CSV_COLUMNS)
        w.writerows(self.csv_rows())
        return buf.getvalue()

    def to_markdown(self) -> str:
        def fmt(x):
            return f"{x:.6g}" if isinstance(x, float) else str(x)

        lines = [f"## {self.scenario}: {'PASS' if self.passed else 'FAIL'}", "",
                 "params: " + ", ".join(f"{k}={v}" for k, v in self.params.items()), "",
                 "| quantity | estimate | stderr | expected | provenance | pass |", "|---|---|---|---|---|---|"]
        for c in self.checks:
            lines.append(f"| {c.quantity} | {fmt(c.estimate)} | {c.stderr:.2g} | {fmt(c.expected)} | {c.provenance} | "
                         f"{'yes' if c.passed else 'NO'} |")
        if self.errata:
            lines += ["", "### errata", ""]
            for e in self.errata:
                lines.append(f"- {e['quantity']}: stated {e['stated']}, observed {e['observed']}. {e['note']}")
        for r in self.reports:
            lines += ["", f"### {r['definition']}, p = {r['p']:g}: {r['verdict']}", ""]
            for s in r["stages"]:
                lines.append(f"- {s['name']}: {s['statistic']:.4g} vs {s['threshold']:.3g} -> {s['verdict']}")
        return "\n".join(lines)


def _within(est: float, se: float, expected: float, k: float = N_SE, floor: float = 1e-12) -> bool:
    return abs(est - expected) <= k * se + floor * max(1.0, abs(expected))


def random_step(rng: np.random.Generator, grid: Grid, scale: float = 1.0, density: float = 0.7) -> StepFunction:
    """Random step function resolved on ``grid``."""
    vals = rng.normal(0.0, scale, grid.m) * (rng.random(grid.m) < density)
    return grid.step(vals)


def random_grid(rng: np.random.Generator, max_cells: int = 6, horizon: float = 1.0) -> Grid:
    m = int(rng.integers(1, max_cells + 1))
    inner_pts = np.sort(rng.uniform(0.0, horizon, m - 1))
    pts = np.unique(np.round(np.concatenate([[0.0], inner_pts, [horizon]]), 6))
    return Grid(tuple(pts))


# --------------------------------------------------------------------------
# exp(p B_t²): moments, membership boundary and a heavy-tailed integrand

def gaussian_square_moment(p: float, t: float) -> float:
    """``E[exp(p B_t²)] = 1/sqrt(1 - 2pt)``; infinite for ``t >= 1/(2p)``."""
    return 1.0 / math.sqrt(1.0 - 2.0 * p * t) if 2.0 * p * t < 1.0 else math.inf


def scenario_square_exponential(p: float = 1.0, t_values: Sequence[float] | None = None, n_paths: int = 2**20,
                        seed: int = 42, refine_levels: Sequence[int] = tuple(range(2, 10)),
                        refine_paths: int = 20_000, refine_eps: float = 0.5) -> ScenarioReport:
    """Moments of ``exp(p B_t²)`` on both sides of ``t = 1/(2p)`` and the refinement
    study of ``exp(2B_t² - 2B_t B_1 + B_1²) = exp(B_t²) exp((B_1 - B_t)²)``."""
    if p <= 0:
        raise ValueError("p must be > 0")
    b = 1.0 / (2.0 * p)
    if t_values is None:
        t_values = (0.0, 2.0 * b / 3.0, 1.02 * b, 1.2 * b)
    rep = ScenarioReport("remark-2-6", {"p": p, "t_values": list(t_values), "n_paths": n_paths, "seed": seed,
                                        "refine_levels": list(refine_levels), "refine_paths": refine_paths,
                                        "refine_eps": refine_eps})
    # B_t = sqrt(t) Z with one shared standard normal column
    Z = sample_paths(Grid((0.0, 1.0)), n_paths, seed).samples[:, 0]
    for t in t_values:
        x = np.exp(p * t * Z**2)
        est = estimate_mean(x)
        if t < b:
            exact = gaussian_square_moment(p, t)
            rep.add(f"E[exp({p:g}B_t^2)], t={t:.4g}", est.estimate, exact, TRIVIAL if t == 0 else PAPER,
                    _within(est.estimate, est.stderr, exact), est.stderr, "3 SE")
            d = doubling_study(x)
            rep.add(f"no divergence flag, t={t:.4g}", d.growth, "growth <= 0.1", DERIVED, not d.flagged,
                    note=f"median-of-means ladder {np.round(d.mom, 4).tolist()}")
        else:
            d = doubling_study(x)
            rep.add(f"divergence flag, t={t:.4g}", d.growth, "growth > 0.1", PAPER, d.flagged,
                    note=f"sample means {np.round(d.means, 3).tolist()}")
    rep.errata.append({"quantity": "L^p membership boundary", "stated": "t in [0, 1/(2p)]",
                       "observed": "t in [0, 1/(2p))",
                       "note": "at t = 1/(2p) the moment 1/sqrt(1-2pt) is infinite, so the endpoint is excluded"})

    # heavy-tailed Ayew-Kuo integrand
    f = PathFunctional(lambda t, w: np.exp(w.at(t) ** 2), ADAPTED, "exp(B_t^2)")
    phi = PathFunctional(lambda t, w: np.exp(w.increment(t, 1.0) ** 2), INSTANTLY_INDEPENDENT, "exp((B_1-B_t)^2)")
    parts = [Partition.uniform(0.0, 1.0, 2**k) for k in refine_levels]
    base = sample_paths(Grid.dyadic(1.0, refine_levels[0]), refine_paths, seed + 1)
    study = refinement_study(f, phi, parts, base, eps=refine_eps)
    rep.reports.append(study.to_dict())
    q = study.stages[0].increments
    tail = q[-3:]
    decaying = all(b2 <= a2 for a2, b2 in zip(tail, tail[1:])) and q[-1] < q[0]
    rep.add("P(|S_l - S_l+1| > eps) decays", q[-1], f"< {q[0]:.3g}, monotone tail", DERIVED, decaying,
            note=f"levels {list(refine_levels)}: {np.round(q, 4).tolist()}")
    rep.add("refinement study not refuted", study.verdict, "certified or inconclusive", DERIVED,
            study.verdict != REFUTED)
    fine = base
    for _ in range(refine_levels[-1] - refine_levels[0]):
        fine = fine.refine()
    S = ak_riemann_sum(f, phi, parts[-1], fine, check=False)
    d = doubling_study(S**2, n_min=max(256, refine_paths // 64))
    rep.add("second moment of sums blows up", d.growth, "growth > 0.1", PAPER, d.flagged,
            note=f"median-of-means of S^2: {np.round(d.mom, 2).tolist()}")
    rep.summary["ayed_kuo_sums"] = study.limit
    return rep


# --------------------------------------------------------------------------
# the worked example on {0, 1/3}

T3 = 1.0 / 3.0


def _c3() -> float:
    # E|B_{1/3}| = sqrt(2/pi) / sqrt(3)
    return math.sqrt(2.0 / math.pi) / math.sqrt(3.0)


def vn_process(n: int, grid: Grid | None = None) -> ElementaryProcess:
    """``v^n = sum_{k<=n} B_{1/3}^{2k}/k! ⊗ 1_{(0,1/3]}``."""
    grid = grid or Grid((0.0, T3))
    B = brownian(T3, grid)
    F = GepElement.zero(grid)
    for k in range(n + 1):
        F = F + power(B, 2 * k) / math.factorial(k)
    return ElementaryProcess.single(F, indicator(0.0, T3))


def vn_integral_closed_form(n: int, grid: Grid | None = None) -> GepElement:
    """``δ(v^n) = (1/3) sum_{k<n} B^{2k+1}/k! + B^{2n+1}/n!`` (telescoped per-k formula)."""
    grid = grid or Grid((0.0, T3))
    B = brownian(T3, grid)
    X = power(B, 2 * n + 1) / math.factorial(n)
    for k in range(n):
        X = X + power(B, 2 * k + 1) / (3.0 * math.factorial(k))
    return X


def vn_integral_stated(n: int, grid: Grid | None = None) -> GepElement:
    """``(1/3) sum_{k<=n} B^{2k+1}/k!``, the published finite-n form."""
    grid = grid or Grid((0.0, T3))
    B = brownian(T3, grid)
    X = GepElement.zero(grid)
    for k in range(n + 1):
        X = X + power(B, 2 * k + 1) / (3.0 * math.factorial(k))
    return X


def stated_abs_bound(n: int) -> float:
    """Published finite-n bound ``sqrt(2/pi) 3^{-3/2} sum_{k<=n} (2/3)^k``."""
    return math.sqrt(2.0 / math.pi) * 3.0**-1.5 * sum((2.0 / 3.0) ** k for k in range(n + 1))


def scenario_series_integral(n_max: int = 8, n_paths: int = 100_000, seed: int = 42,
                            closure_terms: int = 16) -> ScenarioReport:
    """Skorokhod integrals of ``B_{1/3}^{2k} ⊗ 1_{(0,1/3]}`` and of their exponential series."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    grid = Grid((0.0, T3))
    rep = ScenarioReport("remark-3-8-iii", {"n_max": n_max, "n_paths": n_paths, "seed": seed,
                                            "closure_terms": closure_terms})
    B = brownian(T3, grid)
    one = indicator(0.0, T3)

    # (a) per-k identity and the series identity
    worst = 0.0
    for k in range(n_max + 1):
        got = skorokhod_elementary(ElementaryProcess.single(power(B, 2 * k), one))
        want = power(B, 2 * k + 1) - (power(B, 2 * k - 1).scale(2 * k / 3) if k else GepElement.zero(grid))
        worst = max(worst, max_coeff_diff(got, want))
    rep.add(f"δ(B^2k ⊗ 1) = B^2k+1 - (2k/3)B^2k-1, k<={n_max}", worst, 0.0, PAPER, worst <= SYM_TOL,
            tolerance="1e-10 coefficients")
    rep.add("δ(1 ⊗ 1_(0,1/3]) = B_1/3", max_coeff_diff(skorokhod_elementary(ElementaryProcess.single(
        GepElement.constant(1.0, grid), one)), B), 0.0, TRIVIAL, True)

    worst_c = 0.0
    stated_gap = []
    for n in range(n_max + 1):
        d = skorokhod_elementary(vn_process(n, grid))
        worst_c = max(worst_c, max_coeff_diff(d, vn_integral_closed_form(n, grid)))
        stated_gap.append(max_coeff_diff(d, vn_integral_stated(n, grid)))
    rep.add(f"δ(v^n) = (1/3)Σ_(k<n) B^2k+1/k! + B^2n+1/n!, n<={n_max}", worst_c, 0.0, DERIVED, worst_c <= SYM_TOL,
            tolerance="1e-10 coefficients")
    rep.errata.append({"quantity": "δ(v^n) finite-n form", "stated": "(1/3) Σ_(k<=n) B^(2k+1)/k!",
                       "observed": f"max coefficient gap {max(stated_gap):.4g} (n=0 gives B, not B/3)",
                       "note": "the per-k formula telescopes to (1/3)Σ_(k<n) B^(2k+1)/k! + B^(2n+1)/n!; "
                               "both forms share the limit (1/3) B exp(B^2)"})

    # (b) absolute moments
    paths = sample_paths(grid, n_paths, seed)
    Zc = paths.samples[:, 0]
    Bv = math.sqrt(T3) * Zc
    for k in range(4):
        est = estimate_mean(np.abs(Bv) ** (2 * k + 1))
        exact = math.sqrt(2 / math.pi) * 2**k * math.factorial(k) * T3 ** (k + 0.5)
        rep.add(f"E|B_1/3^{2 * k + 1}|", est.estimate, exact, PAPER, _within(est.estimate, est.stderr, exact),
                est.stderr, "3 SE")
    c = _c3()
    observed = []
    for n in range(n_max + 1):
        est = estimate_mean(np.abs(eval_gep(skorokhod_elementary(vn_process(n, grid)), paths)))
        observed.append((est, stated_abs_bound(n)))
        rep.add(f"E|δ(v^{n})|", est.estimate, c, DERIVED, _within(est.estimate, est.stderr, c), est.stderr, "3 SE")
    rep.errata.append({"quantity": "E|δ(v^n)| bound", "stated": "sqrt(2/pi) 3^(-3/2) Σ_(k<=n) (2/3)^k",
                       "observed": "; ".join(f"n={n}: {e.estimate:.4f} vs {bnd:.4f}" for n, (e, bnd) in
                                             enumerate(observed)),
                       "note": f"E|δ(v^n)| = sqrt(2/pi)/sqrt(3) = {c:.6f} for every n, above the finite-n bound; "
                               "the n = ∞ value of the bound holds with equality"})

    # (c) pathwise convergence toward (1/3) B exp(B²)
    limit = Bv * np.exp(Bv**2) / 3.0
    lim_abs = estimate_mean(np.abs(limit))
    rep.add("E|δ(u)| <= sqrt(2/pi)/sqrt(3)", lim_abs.estimate, c, PAPER,
            lim_abs.estimate - N_SE * lim_abs.stderr <= c, lim_abs.stderr, "3 SE")
    gaps = []
    for n in range(n_max + 1):
        diff = np.abs(eval_gep(vn_integral_closed_form(n, grid), paths) - limit)
        gaps.append(estimate_mean(diff))
    ok = all(g.estimate - N_SE * g.stderr <= 2 * c * (2 / 3) ** (n + 1) for n, g in enumerate(gaps))
    rep.add(f"E|δ(v^n) - (1/3)B e^(B^2)| <= 2c(2/3)^(n+1), n<={n_max}", gaps[-1].estimate,
            2 * c * (2 / 3) ** (n_max + 1), DERIVED, ok, gaps[-1].stderr, "3 SE")
    med = [float(np.median(np.abs(eval_gep(vn_integral_closed_form(n, grid), paths) - limit)))
           for n in range(n_max + 1)]
    rep.add("median pathwise gap decreases", med[-1], f"< {med[0]:.3g}", PAPER,
            all(b2 <= a2 for a2, b2 in zip(med, med[1:])))

    # (d) closures
    seq = [vn_process(n, grid) for n in range(closure_terms)]
    expected = {(1.0, "D3.7"): CERTIFIED, (1.0, "D3.10"): CERTIFIED, (2.0, "D3.7"): REFUTED, (2.0, "D3.10"): REFUTED}
    for (p, tag), want in expected.items():
        r = closure_skorokhod(seq, p, paths) if tag == "D3.7" else closure_ayedkuo(seq, p, paths, definition=tag)
        rep.reports.append(r.to_dict())
        rep.add(f"closure {tag}, p={p:g}", r.verdict, want, PAPER, r.verdict == want)
        if tag == "D3.7" and p == 1.0:
            lim_est = estimate_mean(np.abs(eval_gep(skorokhod_elementary(seq[-1]), paths) - limit))
            bound = 2 * c * (2 / 3) ** closure_terms
            rep.add("closure limit matches (1/3)B e^(B^2)", lim_est.estimate, bound, PAPER,
                    lim_est.estimate - N_SE * lim_est.stderr <= bound, lim_est.stderr, "3 SE")
    return rep


# --------------------------------------------------------------------------
# Riemann sums of the Wick-exponential integrand

def ak_sum_element(g: StepFunction, h: StepFunction, grid: Grid) -> GepElement:
    """Symbolic Ayew-Kuo Riemann sum of ``exp^◇(I(g)) ⊗ h`` on the cells of ``grid``.

    Uses the factors ``exp^◇(I(g 1_[0,t_{i-1})))`` and
    ``exp^◇(I(g 1_(t_i,∞))) h(t_i)``.
    """
    out = GepElement.zero(grid)
    for i, (a, b) in enumerate(grid.cells()):
        hv = h(b)
        if hv == 0.0:
            continue
        f = wick_exp(restrict_before(g, a), grid)
        phi = wick_exp(restrict_after(g, b), grid)
        out = out + mul(mul(f, phi), wiener(grid.cell_indicator(i), grid)).scale(hv)
    return out


def unit_l2_gap(m: int) -> float:
    """Exact ``||S_m - δ(u)||_{L²}`` for ``g = h = 1_(0,1]`` on ``m`` equal cells."""
    dt = 1.0 / m
    e = math.exp(-dt)
    eq = dt * e - 2 * dt
    eq2 = dt * e - 2 * (dt * dt + dt) * e + 4 * dt * dt + dt
    return math.sqrt(math.e * (m * (eq2 - eq * eq) + (e - 1.0) ** 2))


def _first_level_below(target: float) -> int:
    lev = 0
    while unit_l2_gap(2**lev) > target:
        lev += 1
    return lev


def _coarsest_resolving(levels: Sequence[int], fs: Sequence[StepFunction], horizon: float = 1.0) -> int:
    for lev in levels:
        if all(Grid.dyadic(horizon, lev).resolves(f) for f in fs):
            return lev
    raise ValueError("g and h are not resolved on the finest grid")


def scenario_riemann_sums(g: StepFunction | None = None, h: StepFunction | None = None,
                         mesh_levels: Sequence[int] = tuple(range(4, 11)), n_paths: int = 100_000,
                         seed: int = 42, symbolic_max: int = 6, target: float = 5e-2,
                         tol: float = 1e-4) -> ScenarioReport:
    """Ayew-Kuo Riemann sums of ``exp^◇(I(g)) ⊗ h`` against ``δ`` of the same process."""
    g = g if g is not None else indicator(0.0, 1.0)
    h = h if h is not None else indicator(0.0, 1.0)
    levels = sorted(mesh_levels)
    if len(levels) < 3:
        raise ValueError("need at least three mesh levels")
    rep = ScenarioReport("theorem-2-3", {"g": g.to_json(), "h": h.to_json(), "mesh_levels": levels,
                                         "n_paths": n_paths, "seed": seed, "target": target})
    unit = g == indicator(0.0, 1.0) and h == indicator(0.0, 1.0)

    ref_level = _coarsest_resolving(levels, [g, h])
    ref_grid = Grid.dyadic(1.0, ref_level)
    delta = skorokhod_elementary(ElementaryProcess.wick_exp_tensor(g, h, ref_grid))
    if unit:
        x = wick_exp(g, ref_grid)
        want = mul(x, wiener(h, ref_grid) - 1.0)
        rep.add("δ(u) = e^(B_1 - 1/2)(B_1 - 1)", max_coeff_diff(delta, want), 0.0, PAPER,
                allclose(delta, want, SYM_TOL))

    # g = 0 reduces to the Wiener integral
    zg = Grid.dyadic(1.0, ref_level)
    s0 = ak_sum_element(StepFunction(), h, zg)
    rep.add("g = 0: sums equal I(h)", max_coeff_diff(s0, wiener(h, zg)), 0.0, TRIVIAL,
            allclose(s0, wiener(h, zg), SYM_TOL))

    # Monte Carlo refinement on coupled dyadic grids
    f, phi = wick_exp_factors(g, h)
    parts = [Partition.uniform(0.0, 1.0, 2**k) for k in levels]
    base = sample_paths(Grid.dyadic(1.0, levels[0]), n_paths, seed)
    chain = base
    for _ in range(ref_level - levels[0]):
        chain = chain.refine()
    ref_on_chain = skorokhod_elementary(ElementaryProcess.wick_exp_tensor(g, h, chain.grid))
    study = refinement_study(f, phi, parts, base, eps=Thresholds().eps, reference=ref_on_chain)
    rep.reports.append(study.to_dict())
    dist = study.limit["l2_distance"]
    dse = study.limit["l2_distance_stderr"]
    mono = all(b2 <= a2 + N_SE * math.hypot(sa, sb) for a2, b2, sa, sb in zip(dist, dist[1:], dse, dse[1:]))
    rep.add("L2 distance decreases with mesh", dist[-1], f"<= {dist[0]:.4g}", DERIVED, mono,
            note=f"distances {np.round(dist, 5).tolist()}")
    if unit:
        for lev, d_est, s_est in zip(levels, dist, dse):
            exact = unit_l2_gap(2**lev)
            rep.add(f"L2 distance, mesh 2^-{lev}", d_est, exact, DERIVED, _within(d_est, s_est, exact), s_est, "3 SE")
    rep.add(f"L2 distance at mesh 2^-{levels[-1]} <= {target:g}", dist[-1], target, DERIVED,
            dist[-1] - N_SE * dse[-1] <= target, dse[-1], "3 SE")
    if unit and unit_l2_gap(2 ** levels[-1]) > target:
        rep.errata.append({"quantity": f"L2 distance at mesh 2^-{levels[-1]}", "stated": f"<= {target:g}",
                           "observed": f"{dist[-1]:.5f} (exact {unit_l2_gap(2 ** levels[-1]):.5f})",
                           "note": "the gap behaves like sqrt(2e·mesh); the target first holds at mesh "
                                   f"2^-{_first_level_below(target)}"})

    # exact symbolic gaps and the S-transform harness on coarse levels
    sym_levels = list(range(_coarsest_resolving(range(max(symbolic_max, ref_level) + 1), [g, h]),
                            symbolic_max + 1))
    sums, gaps = [], []
    for lev in sym_levels:
        grid = Grid.dyadic(1.0, lev)
        S = ak_sum_element(g, h, grid)
        d_ref = skorokhod_elementary(ElementaryProcess.wick_exp_tensor(g, h, grid))
        sums.append((grid, S, d_ref))
        gaps.append(math.sqrt(max(moment(S - d_ref, 2), 0.0)))
    if unit and sym_levels:
        err = max(abs(gp - unit_l2_gap(2**lev)) for lev, gp in zip(sym_levels, gaps))
        rep.add(f"symbolic L2 gap = closed form, levels {sym_levels[0]}..{sym_levels[-1]}", err, 0.0, DERIVED,
                err <= SYM_TOL)
    if sym_levels:
        fine = sums[-1][0]
        lift = [ak_sum_element(g, h, Grid.dyadic(1.0, lev)) for lev in sym_levels]
        lifted = [_lift(S, fine) for S in lift]
        cand = sums[-1][2]
        tests = [fine.step(np.eye(fine.m)[i]) for i in range(0, fine.m, max(1, fine.m // 8))] + [indicator(0.0, 1.0)]
        r = certify_strong_convergence(lifted, cand, 2.0, tests, tol=tol)
        rep.reports.append(r.to_dict())
        s_inc = r.stages[0].increments
        m_inc = r.stages[1].increments
        halving = all(b2 <= 0.75 * a2 for a2, b2 in zip(s_inc, s_inc[1:]) if a2 > 1e-13) and \
            all(b2 <= 0.75 * a2 for a2, b2 in zip(m_inc, m_inc[1:]) if a2 > 1e-13)
        rep.add("S-transform and moment gaps shrink with the mesh", s_inc[-1], "ratio <= 0.75 per level", DERIVED,
                halving, note=f"S gaps {np.round(s_inc, 6).tolist()}, moment gaps {np.round(m_inc, 6).tolist()}; "
                              f"harness verdict at tol {tol:g}: {r.verdict}")
    rep.summary["l2_distance"] = dist
    rep.summary["l2_distance_stderr"] = dse
    rep.summary["symbolic_gap"] = dict(zip(map(str, sym_levels), gaps))
    return rep


def _lift(X: GepElement, fine: Grid) -> GepElement:
    """Re-express ``X`` on a refinement ``fine`` of its grid (exact)."""
    coarse = X.grid
    idx = [fine.index_of(t) for t in coarse.times]
    sq_c, sq_f = coarse.sqrt_dt, fine.sqrt_dt
    out = GepElement.zero(fine)
    for t in X.terms:
        drift = np.zeros(fine.m)
        for i in range(coarse.m):
            # Z_i = sum_j sqrt(dt_j / dt_i) Z_j over the fine cells j inside coarse cell i
            w = sq_f[idx[i]: idx[i + 1]] / sq_c[i]
            drift[idx[i]: idx[i + 1]] = t.drift[i] * w
        term = GepElement(fine, [(drift, {(): 1.0})])
        poly = GepElement.zero(fine)
        for mono, c in t.poly.items():
            piece = GepElement.constant(c, fine)
            for cell, p in mono:
                a, b = coarse.cells()[cell]
                zc = wiener(indicator(a, b), fine).scale(1.0 / sq_c[cell])
                piece = mul(piece, power(zc, p))
            poly = poly + piece
        out = out + mul(term, poly)
    return out


# --------------------------------------------------------------------------
# randomized algebra identities

def scenario_wick_identities(trials: int = 100, seed: int = 42, max_cells: int = 6) -> ScenarioReport:
    """Randomized checks of the Wick-exponential identities, moment formula,
    Wick power series, Malliavin duality and the Taylor/Hermite identity."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    rep = ScenarioReport("wick-identities", {"trials": trials, "seed": seed, "max_cells": max_cells})
    w_s = w_prod = w_wick = w_mom = w_series = w_dual = w_taylor = 0.0
    for trial in range(trials):
        grid = random_grid(rng, max_cells)
        if trial == 0:
            g = v = StepFunction()
        else:
            g, v = random_step(rng, grid, 0.6), random_step(rng, grid, 0.6)
        hh = random_step(rng, grid)
        eg = wick_exp(g, grid)
        X = mul(eg, wiener(hh, grid) - inner(g, hh))
        w_s = max(w_s, abs(s_transform(X, v) - math.exp(inner(g, v)) * inner(v, hh)))
        u = ElementaryProcess.wick_exp_tensor(g, hh, grid)
        w_s = max(w_s, abs(s_residual(X, u, v)))
        ev = wick_exp(v, grid)
        w_prod = max(w_prod, max_coeff_diff(mul(eg, ev), wick_exp(g + v, grid).scale(math.exp(inner(g, v)))))
        w_wick = max(w_wick, max_coeff_diff(wick_mul(eg, ev), wick_exp(g + v, grid)))
        nn = inner(g, g)
        for p in range(1, 5):
            exact = math.exp((p * p - p) / 2 * nn)
            w_mom = max(w_mom, abs(moment(eg, p) - exact) / exact)
        if trial < 20:
            N = 6
            x = wiener(g, grid)
            part = GepElement.zero(grid)
            for k in range(N + 1):
                part = part + wick_power(x, k) / math.factorial(k)
            tail = math.fsum(nn**k / math.factorial(k) for k in range(N + 1, 80))
            err = moment(eg - part, 2)
            w_series = max(w_series, abs(err - tail) / max(1.0, tail))
            F = mul(wick_exp(random_step(rng, grid, 0.5), grid), wiener(random_step(rng, grid), grid) + 0.5)
            uu = ElementaryProcess(grid, ((wick_exp(random_step(rng, grid, 0.5), grid), random_step(rng, grid)),
                                          (wiener(random_step(rng, grid), grid), random_step(rng, grid))))
            w_dual = max(w_dual, abs(duality_gap(F, uu)))
            t_end = grid.times[int(rng.integers(1, grid.m + 1))]
            f1 = indicator(0.0, t_end)
            for l in range(11):
                w_taylor = max(w_taylor, max_coeff_diff(wick_exp_taylor(f1, grid, l), hermite_element(l, f1, grid)))
    rep.add("S(e^◇I(g)(I(h)-<g,h>))(v) = e^<g,v><v,h>", w_s, 0.0, PAPER, w_s <= SYM_TOL, tolerance="1e-10")
    rep.add("e^◇I(g) e^◇I(v) = e^<g,v> e^◇I(g+v)", w_prod, 0.0, PAPER, w_prod <= SYM_TOL, tolerance="1e-10")
    rep.add("e^◇I(g) ◇ e^◇I(v) = e^◇I(g+v)", w_wick, 0.0, DERIVED, w_wick <= SYM_TOL, tolerance="1e-10")
    rep.add("E[(e^◇I(g))^p] = exp((p^2-p)/2 ||g||^2), p=1..4", w_mom, 0.0, PAPER, w_mom <= SYM_TOL,
            tolerance="1e-10 relative")
    rep.add("Wick power series L2 tail = Σ_(k>N) ||f||^2k/k!", w_series, 0.0, PAPER, w_series <= SYM_TOL,
            tolerance="1e-10 relative")
    rep.add("E[F δ(u)] = E ∫ u_t D_t F dt", w_dual, 0.0, DERIVED, w_dual <= SYM_TOL, tolerance="1e-10")
    rep.add("l! [w^l] e^◇(w B_t) = h^l_t(B_t), l<=10", w_taylor, 0.0, PAPER, w_taylor <= SYM_TOL,
            tolerance="1e-10 coefficients")
    grid = Grid((0.0, 1.0))
    z = StepFunction()
    rep.add("p=1 moment", moment(wick_exp(indicator(0, 1), grid), 1), 1.0, PAPER,
            abs(moment(wick_exp(indicator(0, 1), grid), 1) - 1.0) <= SYM_TOL)
    rep.add("g = v = 0: S(e^◇0)(0) = 1", s_transform(wick_exp(z, grid), z), 1.0, TRIVIAL,
            abs(s_transform(wick_exp(z, grid), z) - 1.0) <= SYM_TOL)
    return rep


SCENARIOS: dict[str, Callable[..., ScenarioReport]] = {
    "remark-2-6": scenario_square_exponential,
    "remark-3-8-iii": scenario_series_integral,
    "theorem-2-3": scenario_riemann_sums,
    "wick-identities": scenario_wick_identities,
}


def run_scenario(scenario_id: str, **overrides) -> ScenarioReport:
    try:
        fn = SCENARIOS[scenario_id]
    except KeyError:
        raise KeyError(f"unknown scenario {scenario_id!r}; known: {', '.join(SCENARIOS)}") from None
    return fn(**overrides)
