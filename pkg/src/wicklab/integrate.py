"""Integral operators on elementary processes and the closure drivers that
certify convergence of approximating sequences.

Two closures are provided:

* :func:`closure_skorokhod` -- strong ``L^p`` convergence of integrands and of
  their Skorokhod integrals (tags ``D3.7``, or ``D3.2`` with an extra
  S-transform characterization stage, ``p > 1``);
* :func:`closure_ayedkuo` -- pathwise convergence of integrands and
  convergence in probability of their Ayew-Kuo integrals (tags ``D3.10``, or
  ``D3.6`` at ``p = 2`` without the ``L^p`` membership stage).
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .convergence import (
    CERTIFIED,
    INCONCLUSIVE,
    REFUTED,
    ConvergenceReport,
    Stage,
    Thresholds,
    combine,
    is_decaying,
    judge,
    proportion_bounds,
    summarize,
)
from .mcsim import EstimatorResult, PathEnsemble, estimate_lp
from .stepfn import StepFunction, inner
from .wickalg import (
    BudgetExceeded,
    ElementaryProcess,
    GepElement,
    GridMismatch,
    adapted_before,
    expect,
    malliavin,
    moment,
    mul,
    s_transform,
    wick_mul,
    wiener,
)

__all__ = [
    "ConvergenceReport",
    "ElementaryProcess",
    "Thresholds",
    "ayed_kuo_elementary",
    "certify_strong_convergence",
    "closure_ayedkuo",
    "closure_skorokhod",
    "duality_gap",
    "element_lp",
    "ito_pathwise",
    "pairing",
    "process_lp",
    "s_residual",
    "skorokhod_elementary",
]


# --------------------------------------------------------------------------
# integrals of elementary processes

def skorokhod_elementary(u: ElementaryProcess) -> GepElement:
    """``δ(u) = sum_j F_j ◇ I(h_j)``."""
    out = GepElement.zero(u.grid)
    for F, h in u.summands:
        out = out + wick_mul(F, wiener(h, u.grid))
    return out


def ayed_kuo_elementary(u: ElementaryProcess) -> GepElement:
    """Ayew-Kuo integral of ``u``.

    On the Wick-exponential span this is the closed form
    ``exp^◇(I(g)) (I(h) - <g, h>)`` built with ordinary products only, an
    independent route from :func:`skorokhod_elementary`. Other processes
    fall back to the Skorokhod integral, with which it agrees on the
    closure of that span.
    """
    if not u.in_exp_span():
        return skorokhod_elementary(u)
    grid = u.grid
    out = GepElement.zero(grid)
    for F, h in u.summands:
        hv = grid.cell_values(h) * grid.sqrt_dt
        Ih = wiener(h, grid)
        for t in F.terms:
            term = GepElement(grid, [(t.drift, t.poly)])
            out = out + mul(term, Ih - float(t.drift @ hv))
    return out


def _same_grid(X: GepElement, u: ElementaryProcess) -> None:
    if X.grid != u.grid:
        raise GridMismatch("element and process live on different grids")


def s_residual(X: GepElement, u: ElementaryProcess, v: StepFunction) -> float:
    """``(SX)(v) - ∫ (S u_t)(v) v(t) dt`` with the integral in closed form."""
    _same_grid(X, u)
    rhs = math.fsum(s_transform(F, v) * inner(h, v) for F, h in u.summands)
    return s_transform(X, v) - rhs


def pairing(u: ElementaryProcess, w: ElementaryProcess) -> float:
    """``E ∫ u_t w_t dt`` in closed form."""
    if u.grid != w.grid:
        raise GridMismatch("processes live on different grids")
    dt = u.grid.dt
    return math.fsum(dt[i] * expect(mul(a, b))
                     for i, (a, b) in enumerate(zip(u.cell_elements(), w.cell_elements()))
                     if not (a.is_zero() or b.is_zero()))


def duality_gap(F: GepElement, u: ElementaryProcess) -> float:
    """``E[F δ(u)] - E ∫ u_t D_t F dt``; zero when δ is the adjoint of D."""
    _same_grid(F, u)
    return expect(mul(F, skorokhod_elementary(u))) - pairing(u, malliavin(F))


def ito_pathwise(u: ElementaryProcess, Z: np.ndarray) -> np.ndarray:
    """Forward Itô sum ``sum_i u_{t_{i-1}} ΔB_i`` on the grid cells.

    ``Z`` holds standardized increments, one row per path (or a single path).
    Raises ValueError if some cell value of ``u`` looks into its own cell or
    beyond.
    """
    grid = u.grid
    for i, X in enumerate(u.cell_elements()):
        if not adapted_before(X, grid.times[i]):
            raise ValueError(f"process is not adapted on cell {i} {grid.cells()[i]}")
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 1
    Z2 = np.atleast_2d(Z)
    vals = u.evaluate(Z2) if u.summands else np.zeros_like(Z2)
    out = np.sum(vals * Z2 * grid.sqrt_dt, axis=1)
    return out[0] if single else out


# --------------------------------------------------------------------------
# L^p norms

def _even_int(p: float) -> bool:
    return float(p).is_integer() and int(p) % 2 == 0


def _exact_process_lp(u: ElementaryProcess, p: int) -> float:
    dt = u.grid.dt
    total = math.fsum(dt[i] * moment(X, p) for i, X in enumerate(u.cell_elements()) if not X.is_zero())
    return max(total, 0.0) ** (1 / p)


def _exact_element_lp(X: GepElement, p: int) -> float:
    return max(moment(X, p), 0.0) ** (1 / p) if not X.is_zero() else 0.0


def _path_lp_process(vals: np.ndarray, dt: np.ndarray, p: float) -> np.ndarray:
    # per-path (∫ |u|^p dt)^{1/p}
    return np.sum(np.abs(vals) ** p * dt, axis=1) ** (1 / p)


def process_lp(u: ElementaryProcess, p: float, paths: PathEnsemble | None = None) -> EstimatorResult:
    """``||u||_{L^p(Ω×[0,∞))}``: exact for even integer ``p``, Monte Carlo otherwise."""
    if _even_int(p):
        try:
            return EstimatorResult(_exact_process_lp(u, int(p)), 0.0, 0)
        except BudgetExceeded:
            if paths is None:
                raise
    if paths is None:
        raise ValueError("a path ensemble is needed for this L^p norm")
    dt = u.grid.dt
    return estimate_lp(paths.map_blocks(lambda Z: _path_lp_process(u.evaluate(Z), dt, p)), p)


def element_lp(X: GepElement, p: float, paths: PathEnsemble | None = None) -> EstimatorResult:
    """``||X||_{L^p(Ω)}``: exact for even integer ``p``, Monte Carlo otherwise."""
    if _even_int(p):
        try:
            return EstimatorResult(_exact_element_lp(X, int(p)), 0.0, 0)
        except BudgetExceeded:
            if paths is None:
                raise
    if paths is None:
        raise ValueError("a path ensemble is needed for this L^p norm")
    return estimate_lp(paths.map_blocks(X.evaluate), p)


def _norm_table(objs: list, pairs: list[tuple[int, int | None]], p: float, paths: PathEnsemble | None,
                kind: str) -> tuple[list[EstimatorResult], str, np.ndarray | None]:
    """L^p norms of ``objs[i] - objs[j]`` (or ``objs[i]`` if ``j`` is None).

    Uses the exact moment engine when ``p`` is an even integer and the degree
    budget allows; otherwise one Monte Carlo pass evaluates every member once
    and the per-path table is returned alongside for paired comparisons.
    """
    def diff(i, j):
        return objs[i] if j is None else objs[i] - objs[j]

    exact = _exact_process_lp if kind == "process" else _exact_element_lp
    if _even_int(p):
        try:
            return [EstimatorResult(exact(diff(i, j), int(p)), 0.0, 0) for i, j in pairs], "exact", None
        except BudgetExceeded:
            if paths is None:
                raise
    if paths is None:
        raise ValueError("a path ensemble is needed for this L^p norm")

    if kind == "process":
        dt = objs[0].grid.dt

        def block(Z):
            vals = [o.evaluate(Z) for o in objs]
            cols = [_path_lp_process(vals[i] if j is None else vals[i] - vals[j], dt, p) for i, j in pairs]
            return np.stack(cols, axis=1)
    else:
        def block(Z):
            vals = [o.evaluate(Z) for o in objs]
            return np.stack([np.abs(vals[i] if j is None else vals[i] - vals[j]) for i, j in pairs], axis=1)

    table = paths.map_blocks(block)
    return [estimate_lp(table[:, k], p) for k in range(len(pairs))], "monte carlo", table


def _paired_norm_gap(table: np.ndarray, i: int, j: int, p: float) -> EstimatorResult:
    """``| ||col_i||_p - ||col_j||_p |`` with a delta-method error that uses the pairing."""
    a, b = table[:, i] ** p, table[:, j] ** p
    ma, mb = a.mean(), b.mean()
    gap = ma ** (1 / p) - mb ** (1 / p)
    wa = ma ** (1 / p - 1) / p if ma > 0 else 0.0
    wb = mb ** (1 / p - 1) / p if mb > 0 else 0.0
    infl = wa * (a - ma) - wb * (b - mb)
    return EstimatorResult(abs(float(gap)), float(np.std(infl, ddof=1) / math.sqrt(len(a))), len(a))


# --------------------------------------------------------------------------
# closure drivers

def _validate(seq: Sequence, p: float, p_min: float = 1.0, strict: bool = False) -> list:
    seq = list(seq)
    if not seq:
        raise ValueError("empty sequence")
    if not math.isfinite(p) or p < p_min or (strict and p == p_min):
        raise ValueError(f"p = {p} out of range (need p {'>' if strict else '>='} {p_min})")
    grid = seq[0].grid
    if any(x.grid != grid for x in seq):
        raise GridMismatch("sequence members live on different grids")
    return seq


def _cauchy_pairs(K: int, window: int) -> tuple[list, list]:
    N = K - 1
    consecutive = [(k + 1, k) for k in range(N)]
    tail = [(k, N) for k in range(max(0, N - window), N)]
    return consecutive, tail


def _lp_stage(name: str, spreads: list[EstimatorResult], increments: list[EstimatorResult], tol: float,
              th: Thresholds, detail: dict) -> Stage:
    if not spreads:
        return Stage(name, 0.0, tol, CERTIFIED, increments=[], detail=detail)
    z = th.z
    k = int(np.argmax([r.estimate for r in spreads]))
    lower = max(r.estimate - z * r.stderr for r in spreads)
    upper = max(r.estimate + z * r.stderr for r in spreads)
    inc = [r.estimate for r in increments]
    verdict = judge(lower, upper, tol, is_decaying(inc[-th.window:]))
    return Stage(name, spreads[k].estimate, tol, verdict, stderr=spreads[k].stderr, lower=lower, upper=upper,
                 increments=inc, detail={**detail, "tail_spreads": [r.estimate for r in spreads]})


def closure_skorokhod(seq: Sequence[ElementaryProcess], p: float, paths: PathEnsemble | None = None,
                      thresholds: Thresholds | None = None, definition: str = "D3.7",
                      test_fns: Sequence[StepFunction] | None = None) -> ConvergenceReport:
    """Certify ``u^n -> u`` in ``L^p(Ω×[0,∞))`` together with ``δ(u^n)`` in ``L^p(Ω)``.

    Both sequences are tested for the Cauchy property over the last
    ``window`` members; the per-step increments must decay. With
    ``definition="D3.2"`` (``p > 1``) the final integral is also checked
    against the S-transform characterization at ``test_fns``.
    """
    if definition not in ("D3.7", "D3.2"):
        raise ValueError("closure_skorokhod handles D3.7 and D3.2")
    seq = _validate(seq, p, strict=definition == "D3.2")
    th = thresholds or Thresholds()
    ints = [skorokhod_elementary(u) for u in seq]
    consecutive, tail = _cauchy_pairs(len(seq), th.window)

    u_norms, u_mode, _ = _norm_table(seq, consecutive + tail, p, paths, "process")
    d_norms, d_mode, _ = _norm_table(ints, consecutive + tail, p, paths, "element")
    nc = len(consecutive)
    stages = [
        _lp_stage("integrands (L^p)", u_norms[nc:], u_norms[:nc], th.lp_tol, th, {"method": u_mode}),
        _lp_stage("integrals (L^p)", d_norms[nc:], d_norms[:nc], th.lp_tol, th, {"method": d_mode}),
    ]
    if definition == "D3.2":
        vs = list(test_fns) if test_fns else [seq[0].grid.cell_indicator(i) for i in range(seq[0].grid.m)]
        res = max(abs(s_residual(ints[-1], seq[-1], v)) for v in vs)
        stages.append(Stage("S-transform characterization", res, 1e-10, CERTIFIED if res <= 1e-10 else REFUTED,
                            detail={"n_test_fns": len(vs)}))

    limit = {"element": ints[-1].to_json(), "expect": expect(ints[-1])}
    if paths is not None:
        limit.update(summarize(paths.map_blocks(ints[-1].evaluate)))
    return ConvergenceReport(definition, float(p), stages, combine(stages), limit,
                             paths.seed if paths else None, paths.n_paths if paths else None,
                             {**th.__dict__, "sequence_length": len(seq)})


def closure_ayedkuo(seq: Sequence[ElementaryProcess], p: float, paths: PathEnsemble,
                    thresholds: Thresholds | None = None, definition: str = "D3.10") -> ConvergenceReport:
    """Certify pathwise convergence of ``u^n`` and convergence in probability of ``Ī(u^n)``.

    Stages:

    * ``membership`` (D3.10 only): the norms ``||u^n||_{L^p(Ω×[0,∞))}``
      settle, i.e. the limit lies in ``L^p``;
    * ``integrands (pathwise)``: on every sampled path the tail spread of
      ``(∫|u^n - u^N|^p ds)^{1/p}`` is below ``path_tol`` or still shrinking;
    * ``integrals (in probability)``: ``P(|Ī(u^N) - Ī(u^n)| > eps)`` over the
      tail has a Clopper-Pearson upper bound below ``eta``.
    """
    if definition not in ("D3.10", "D3.6"):
        raise ValueError("closure_ayedkuo handles D3.10 and D3.6")
    if definition == "D3.6" and p != 2:
        raise ValueError("D3.6 is the p = 2 closure")
    if paths is None:
        raise ValueError("closure_ayedkuo needs a path ensemble")
    seq = _validate(seq, p)
    th = thresholds or Thresholds()
    grid = seq[0].grid
    if paths.grid != grid:
        raise GridMismatch("ensemble grid differs from process grid")
    ints = [ayed_kuo_elementary(u) for u in seq]
    consecutive, tail = _cauchy_pairs(len(seq), th.window)
    stages = []

    if definition == "D3.10":
        norms, mode, ntab = _norm_table(seq, [(k, None) for k in range(len(seq))], p, paths, "process")
        vals = [r.estimate for r in norms]
        N = len(seq) - 1
        if ntab is None:
            spread = [EstimatorResult(abs(vals[i] - vals[N]), 0.0, 0) for i, _ in tail]
        else:
            spread = [_paired_norm_gap(ntab, i, N, p) for i, _ in tail]
        inc = [EstimatorResult(abs(vals[i] - vals[j]), 0.0, 0) for i, j in consecutive]
        tol = th.lp_tol * max(1.0, vals[N])
        stages.append(_lp_stage("membership (L^p norms)", spread, inc, tol, th, {"method": mode, "norms": vals}))

    dt = grid.dt
    win = consecutive[-th.window:]

    def block(Z):
        U = [u.evaluate(Z) for u in seq]
        I = [X.evaluate(Z) for X in ints]
        spread = np.stack([_path_lp_process(U[i] - U[j], dt, p) for i, j in tail], axis=1) if tail else np.zeros((Z.shape[0], 1))
        step = np.stack([_path_lp_process(U[i] - U[j], dt, p) for i, j in win], axis=1) if win else np.zeros((Z.shape[0], 1))
        dI_tail = np.stack([np.abs(I[i] - I[j]) for i, j in tail], axis=1) if tail else np.zeros((Z.shape[0], 1))
        dI_cons = np.stack([np.abs(I[i] - I[j]) for i, j in consecutive], axis=1) if consecutive else np.zeros((Z.shape[0], 1))
        return np.concatenate([spread.max(axis=1, keepdims=True), step[:, :1], step[:, -1:], dI_tail, dI_cons,
                               I[-1][:, None]], axis=1)

    table = paths.map_blocks(block)
    n = table.shape[0]

    # pathwise stage
    max_spread, first_step, last_step = table[:, 0], table[:, 1], table[:, 2]
    shrinking = (last_step < first_step) | (np.maximum(first_step, last_step) <= 1e-14)
    ok = (max_spread <= th.path_tol) | shrinking
    fails = int(n - np.count_nonzero(ok))
    lo, hi = proportion_bounds(fails, n, th.confidence)
    verdict = CERTIFIED if fails == 0 else (REFUTED if lo > th.eta else INCONCLUSIVE)
    stages.append(Stage("integrands (pathwise)", fails / n, 0.0, verdict, lower=lo, upper=hi,
                        detail={"failing_paths": fails, "median_spread": float(np.median(max_spread)),
                                "max_spread": float(np.max(max_spread))}))

    # in-probability stage
    nt = len(tail)
    dI_tail = table[:, 3: 3 + nt]
    dI_cons = table[:, 3 + nt: 3 + nt + len(consecutive)]
    if nt:
        hits = np.count_nonzero(dI_tail > th.eps, axis=0)
        k = int(np.argmax(hits))
        lo, hi = proportion_bounds(int(hits[k]), n, th.confidence)
        q_cons = list(np.count_nonzero(dI_cons > th.eps, axis=0) / n)
        decaying = is_decaying(q_cons[-th.window:])
        stat = float(hits[k] / n)
        verdict = CERTIFIED if hi < th.eta else judge(lo, hi, th.eta, decaying)
    else:
        stat, lo, hi, q_cons, verdict = 0.0, 0.0, 0.0, [], CERTIFIED
    stages.append(Stage("integrals (in probability)", stat, th.eta, verdict, lower=lo, upper=hi,
                        increments=[float(q) for q in q_cons], detail={"eps": th.eps}))

    limit = {"element": ints[-1].to_json(), **summarize(table[:, -1])}
    return ConvergenceReport(definition, float(p), stages, combine(stages), limit, paths.seed, paths.n_paths,
                             {**th.__dict__, "sequence_length": len(seq)})


def certify_strong_convergence(seq: Sequence[GepElement], candidate: GepElement, p: float,
                               test_fns: Sequence[StepFunction], tol: float = 1e-4,
                               paths: PathEnsemble | None = None,
                               thresholds: Thresholds | None = None) -> ConvergenceReport:
    """Check the two hypotheses that together imply ``X_n -> X`` in ``L^p``.

    * S-transforms converge at every test function;
    * ``E|X_n|^p -> E|X|^p`` (exact for even integer ``p``).

    The first stage is exact; the second is exact or Monte Carlo. The
    verdict is certified only when both hold on the tail of the sequence.
    """
    seq = list(seq)
    if not seq:
        raise ValueError("empty sequence")
    if not (p > 1 and math.isfinite(p)):
        raise ValueError("p must be > 1")
    test_fns = list(test_fns)
    if not test_fns:
        raise ValueError("need at least one test function")
    th = thresholds or Thresholds()
    grid = candidate.grid
    if any(X.grid != grid for X in seq):
        raise GridMismatch("sequence members live on another grid")

    s_target = np.array([s_transform(candidate, v) for v in test_fns])
    s_gap = [float(np.max(np.abs(np.array([s_transform(X, v) for v in test_fns]) - s_target))) for X in seq]
    tail = s_gap[-th.window:]
    s_stage = Stage("S-transforms", max(tail), tol, judge(max(tail), max(tail), tol, is_decaying(tail)),
                    increments=s_gap, detail={"n_test_fns": len(test_fns)})

    norms, mode, ntab = _norm_table(seq + [candidate], [(k, None) for k in range(len(seq) + 1)], p, paths, "element")
    mom = [r.estimate**p for r in norms]
    target = mom[-1]
    scale = max(1.0, abs(target))
    m_gap = [abs(m - target) / scale for m in mom[:-1]]
    if ntab is None:
        m_se = [0.0] * len(seq)
    else:
        y = ntab**p
        m_se = [float(np.std(y[:, k] - y[:, -1], ddof=1) / math.sqrt(len(y))) / scale for k in range(len(seq))]
    z = th.z
    t_gap, t_se = m_gap[-th.window:], m_se[-th.window:]
    lower = max(g - z * s for g, s in zip(t_gap, t_se))
    upper = max(g + z * s for g, s in zip(t_gap, t_se))
    m_stage = Stage("moments", max(t_gap), tol, judge(lower, upper, tol, is_decaying(t_gap)), stderr=max(t_se),
                    lower=lower, upper=upper, increments=m_gap, detail={"method": mode, "target": target})

    stages = [s_stage, m_stage]
    return ConvergenceReport("P2.4" if p == 2 else "P3.4", float(p), stages, combine(stages),
                             {"candidate": candidate.to_json(), "moment": target},
                             paths.seed if paths else None, paths.n_paths if paths else None,
                             {"tol": tol, "window": th.window, "sequence_length": len(seq)})
