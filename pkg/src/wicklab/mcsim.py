"""Monte Carlo engine: counter-based Brownian ensembles, pathwise evaluation,
Ayew-Kuo Riemann sums, refinement studies and estimators."""

from __future__ import annotations

import csv
import io
import math
import os
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from .convergence import (
    ConvergenceReport,
    Stage,
    Thresholds,
    combine,
    is_decaying,
    judge,
    proportion_bounds,
    summarize,
)
from .stepfn import (
    TAU,
    Grid,
    Partition,
    StepFunction,
    inner,
    restrict_after,
    restrict_before,
)
from .wickalg import ElementaryProcess, GepElement, GridMismatch

GENERATOR_ID = "splitmix64-ndtri/1"
_PERTURB_STREAM = 0x7FFF_FFFF
_M64 = np.uint64(0xFFFF_FFFF_FFFF_FFFF)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("WICKLAB_THREADS", "")))
    except ValueError:
        return min(4, os.cpu_count() or 1)


# --------------------------------------------------------------------------
# counter-based normals

def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer (wrapping uint64 arithmetic)."""
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def counter_normals(seed: int, stream: int, rows: np.ndarray, ncols: int) -> np.ndarray:
    """Standard normals ``N[r, j]`` that are a pure function of (seed, stream, r, j)."""
    rows = np.asarray(rows, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(np.array([seed & 0xFFFF_FFFF_FFFF_FFFF], dtype=np.uint64)
                     + np.uint64(0x9E3779B97F4A7C15) * np.uint64(stream + 1))[0]
        ctr = (rows[:, None] << np.uint64(32)) | np.arange(ncols, dtype=np.uint64)[None, :]
        bits = _mix64(_mix64(ctr ^ key) + key)
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


# --------------------------------------------------------------------------
# ensembles

@dataclass(frozen=True)
class PathEnsemble:
    """Seeded matrix of standardized increments ``Z`` (paths x cells).

    Level 0 draws ``Z`` directly from the counter generator; each further
    level halves every cell by Brownian-bridge midpoint insertion, so coarser
    paths are exact restrictions of finer ones.
    """

    grid: Grid
    n_paths: int
    seed: int
    base: Grid | None = None
    level: int = 0
    generator: str = GENERATOR_ID

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.base is None:
            object.__setattr__(self, "base", self.grid)

    def iter_levels(self, start: int, stop: int) -> Iterator[np.ndarray]:
        """Increments of paths ``start..stop-1`` at levels 0, 1, ..., ``level``."""
        rows = np.arange(start, stop)
        Z = counter_normals(self.seed, 0, rows, self.base.m)
        yield Z
        for lev in range(1, self.level + 1):
            xi = counter_normals(self.seed, lev, rows, Z.shape[1])
            child = np.empty((Z.shape[0], 2 * Z.shape[1]))
            child[:, 0::2] = (Z + xi) / math.sqrt(2.0)
            child[:, 1::2] = (Z - xi) / math.sqrt(2.0)
            Z = child
            yield Z

    def block(self, start: int, stop: int) -> np.ndarray:
        Z = None
        for Z in self.iter_levels(start, stop):
            pass
        return Z

    def block_ranges(self, block_size: int | None = None) -> list[tuple[int, int]]:
        if block_size is None:
            block_size = max(1, 2_000_000 // max(1, self.grid.m))
        return [(s, min(s + block_size, self.n_paths)) for s in range(0, self.n_paths, block_size)]

    @cached_property
    def samples(self) -> np.ndarray:
        return self.block(0, self.n_paths)

    def refine(self) -> PathEnsemble:
        return PathEnsemble(self.grid.refine(), self.n_paths, self.seed, self.base, self.level + 1, self.generator)

    def with_paths(self, n_paths: int) -> PathEnsemble:
        return PathEnsemble(self.grid, n_paths, self.seed, self.base, self.level, self.generator)

    def map_blocks(self, fn: Callable[[np.ndarray], np.ndarray], block_size: int | None = None) -> np.ndarray:
        """Apply ``fn`` to each block of increments and concatenate in path order."""
        ranges = self.block_ranges(block_size)
        work = lambda r: fn(self.block(*r))
        nthreads = min(_threads(), len(ranges))
        if nthreads > 1:
            with ThreadPoolExecutor(nthreads) as pool:
                parts = list(pool.map(work, ranges))
        else:
            parts = [work(r) for r in ranges]
        return np.concatenate(parts)


def sample_paths(grid: Grid, n_paths: int, seed: int) -> PathEnsemble:
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    return PathEnsemble(grid, int(n_paths), int(seed))


def _as_increments(paths, grid: Grid) -> np.ndarray:
    if isinstance(paths, PathEnsemble):
        if paths.grid != grid:
            raise GridMismatch("ensemble grid differs from element grid")
        return paths.samples
    Z = np.atleast_2d(np.asarray(paths, dtype=float))
    if Z.shape[1] != grid.m:
        raise GridMismatch("increment matrix does not match grid")
    return Z


def eval_gep(X: GepElement, paths: PathEnsemble) -> np.ndarray:
    if paths.grid != X.grid:
        raise GridMismatch("ensemble grid differs from element grid")
    return paths.map_blocks(X.evaluate)


# --------------------------------------------------------------------------
# path views and functionals

class PathView:
    """Brownian paths on a grid, reconstructed from increments ``Z``."""

    def __init__(self, grid: Grid, Z: np.ndarray):
        self.grid = grid
        self.Z = Z
        self.dB = Z * grid.sqrt_dt
        self.B = np.concatenate([np.zeros((Z.shape[0], 1)), np.cumsum(self.dB, axis=1)], axis=1)
        self._times = np.asarray(grid.times)
        self._cum: dict = {}
        self._cache: dict = {}

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def index(self, t: float) -> int:
        k = int(np.searchsorted(self._times, t - TAU))
        if k >= len(self._times) or abs(self._times[k] - t) > TAU * max(1.0, abs(t)):
            raise ValueError(f"{t} is not a grid point")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.B[:, self.index(t)]

    def increment(self, s: float, t: float) -> np.ndarray:
        return self.B[:, self.index(t)] - self.B[:, self.index(s)]

    def _cumulative(self, g: StepFunction) -> np.ndarray:
        if g not in self._cum:
            w = self.grid.cell_values(g)
            self._cum[g] = np.concatenate([np.zeros((self.n, 1)), np.cumsum(self.dB * w, axis=1)], axis=1)
        return self._cum[g]

    def wiener_upto(self, g: StepFunction, t: float) -> np.ndarray:
        """``I(g 1_{[0, t)})``."""
        return self._cumulative(g)[:, self.index(t)]

    def wiener_from(self, g: StepFunction, t: float) -> np.ndarray:
        """``I(g 1_{(t, ∞)})``."""
        C = self._cumulative(g)
        return C[:, -1] - C[:, self.index(t)]

    def element(self, X: GepElement) -> np.ndarray:
        key = id(X)
        if key not in self._cache:
            self._cache[key] = (X, X.evaluate(self.Z))
        return self._cache[key][1]


ADAPTED = "adapted"
INSTANTLY_INDEPENDENT = "instantly_independent"


@dataclass(frozen=True)
class PathFunctional:
    """``(t, PathView) -> values`` with a declared filtration type."""

    fn: Callable[[float, PathView], np.ndarray]
    kind: str
    name: str = ""

    def __post_init__(self):
        if self.kind not in (ADAPTED, INSTANTLY_INDEPENDENT):
            raise ValueError(f"unknown functional kind {self.kind!r}")

    def __call__(self, t: float, view: PathView) -> np.ndarray:
        v = self.fn(t, view)
        return np.broadcast_to(np.asarray(v, dtype=float), (view.n,))


def constant_functional(c: float, kind: str = INSTANTLY_INDEPENDENT) -> PathFunctional:
    return PathFunctional(lambda t, w: np.full(w.n, float(c)), kind, f"{c:g}")


def brownian_functional() -> PathFunctional:
    return PathFunctional(lambda t, w: w.at(t), ADAPTED, "B_t")


def wick_exp_factors(g: StepFunction, h: StepFunction) -> tuple[PathFunctional, PathFunctional]:
    """Split ``exp^◇(I(g)) h(t)`` into adapted and instantly independent factors.

    ``f(t) = exp^◇(I(g 1_{[0,t)}))`` and ``φ(t) = exp^◇(I(g 1_{(t,∞)})) h(t+)``;
    the deterministic ``h`` sits in ``φ`` so that at a right endpoint ``t_i``
    it picks the value on ``(t_{i-1}, t_i]``.
    """

    def f(t, w):
        gb = restrict_before(g, t)
        return np.exp(w.wiener_upto(g, t) - 0.5 * inner(gb, gb))

    def phi(t, w):
        ga = restrict_after(g, t)
        return np.exp(w.wiener_from(g, t) - 0.5 * inner(ga, ga)) * h(t)

    return PathFunctional(f, ADAPTED, "exp◇(I(g1[0,t)))"), PathFunctional(phi, INSTANTLY_INDEPENDENT, "exp◇(I(g1(t,∞)))h(t)")


def process_functional(u: ElementaryProcess) -> PathFunctional:
    """Right-continuous version ``t -> u_{t+}`` (the value on the cell starting at t)."""
    grid = u.grid
    vals = [grid.cell_values(h) for _, h in u.summands]

    def fn(t, w):
        if w.grid != grid:
            raise GridMismatch("process grid differs from path grid")
        k = w.index(t)
        out = np.zeros(w.n)
        if k >= grid.m:
            return out
        for (F, _), v in zip(u.summands, vals):
            if v[k] != 0.0:
                out += v[k] * w.element(F)
        return out

    return PathFunctional(fn, ADAPTED, "u_{t+}")


class DeclaredTypeError(ValueError):
    """A path functional used increments its declared type forbids."""


def _spot_check(func: PathFunctional, t: float, view: PathView, seed: int) -> None:
    k = view.index(t)
    m = view.grid.m
    cells = np.arange(k, m) if func.kind == ADAPTED else np.arange(0, k)
    if cells.size == 0:
        return
    Z2 = view.Z.copy()
    alt = counter_normals(seed, _PERTURB_STREAM, np.arange(view.n), m)
    Z2[:, cells] = alt[:, cells]
    before = func(t, view)
    after = func(t, PathView(view.grid, Z2))
    scale = np.maximum(1.0, np.abs(before))
    if np.any(np.abs(before - after) > 1e-9 * scale):
        raise DeclaredTypeError(f"{func.name or 'functional'} declared {func.kind} depends on forbidden increments at t={t}")


def _check_partition(partition: Partition, grid: Grid) -> list[int]:
    try:
        return [grid.index_of(s) for s in partition.points]
    except ValueError as exc:
        raise ValueError(f"partition not resolved on the grid: {exc}") from None


def _riemann_block(f, phi, partition: Partition, view: PathView) -> np.ndarray:
    pts = partition.points
    total = np.zeros(view.n)
    for a, b in zip(pts[:-1], pts[1:]):
        total += f(a, view) * phi(b, view) * view.increment(a, b)
    return total


def ak_riemann_sum(f: PathFunctional, phi: PathFunctional, partition: Partition, paths: PathEnsemble,
                   check: bool = True) -> np.ndarray:
    """Pathwise ``sum_i f(t_{i-1}) φ(t_i) ΔB_i`` over ``partition``."""
    if f.kind != ADAPTED or phi.kind != INSTANTLY_INDEPENDENT:
        raise DeclaredTypeError("need an adapted f and an instantly independent φ")
    _check_partition(partition, paths.grid)
    if check:
        view = PathView(paths.grid, paths.block(0, min(8, paths.n_paths)))
        pts = partition.points
        probe = sorted({pts[0], pts[len(pts) // 2], pts[-1]})
        for t in probe:
            _spot_check(f, t, view, paths.seed)
            _spot_check(phi, t, view, paths.seed)
    return paths.map_blocks(lambda Z: _riemann_block(f, phi, partition, PathView(paths.grid, Z)))


# --------------------------------------------------------------------------
# estimators

@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    stderr: float
    n_paths: int
    confidence: float = 0.99

    @property
    def z(self) -> float:
        from scipy.stats import norm
        return float(norm.ppf(0.5 + self.confidence / 2))

    def interval(self) -> tuple[float, float]:
        return self.estimate - self.z * self.stderr, self.estimate + self.z * self.stderr

    def agrees(self, value: float, k: float = 3.0) -> bool:
        return abs(self.estimate - value) <= k * self.stderr

    def csv_row(self, seed: int | None = None) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow([self.estimate, self.stderr, self.n_paths, seed])
        return buf.getvalue()


def estimate_mean(samples: np.ndarray, confidence: float = 0.99) -> EstimatorResult:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("inf")
    return EstimatorResult(float(math.fsum(x) / x.size), se, int(x.size), confidence)


def estimate_lp(samples: np.ndarray, p: float, method: str = "jackknife", n_blocks: int = 32,
                confidence: float = 0.99) -> EstimatorResult:
    """``E[|X|^p]^{1/p}`` with a jackknife (or median-of-means) standard error."""
    if p <= 0:
        raise ValueError("p must be > 0")
    x = np.abs(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    if np.all(x == x[0]):
        return EstimatorResult(float(x[0]), 0.0, n, confidence)
    y = x**p
    if method == "mom":
        k = min(n_blocks, n)
        means = np.array([np.mean(b) for b in np.array_split(y, k)])
        med = float(np.median(means))
        est = med ** (1 / p)
        se_m = 1.2533 * float(np.std(means, ddof=1)) / math.sqrt(k) if k > 1 else float("inf")
        se = se_m * (est / (p * med)) if med > 0 else float("inf")
        return EstimatorResult(est, se, n, confidence)
    if method != "jackknife":
        raise ValueError(f"unknown method {method!r}")
    total = math.fsum(y)
    est = (total / n) ** (1 / p)
    if n == 1:
        return EstimatorResult(est, float("inf"), n, confidence)
    loo = np.maximum((total - y) / (n - 1), 0.0) ** (1 / p)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return EstimatorResult(est, se, n, confidence)


@dataclass
class DoublingStudy:
    """Estimates on nested path prefixes ``n_min, 2 n_min, ..., n``."""

    sizes: list[int]
    means: list[float]
    stderrs: list[float]
    mom: list[float]
    growth: float
    flagged: bool
    detail: dict = field(default_factory=dict)


def doubling_study(samples: np.ndarray, n_min: int = 1024, n_blocks: int = 32,
                   growth_tol: float = 0.10) -> DoublingStudy:
    """Blow-up diagnostic for a mean across path-count doublings.

    Median-of-means estimates with a fixed number of blocks track the mean
    truncated at a level that grows with the block size. When the mean is
    finite they level off; when it is infinite they keep climbing. The flag
    is raised when the estimate still grows by more than ``growth_tol``
    (relative) over the second half of the ladder and that growth is not
    decelerating relative to the first half.
    """
    x = np.asarray(samples, dtype=float)
    sizes = []
    n = n_min
    while n <= x.size:
        sizes.append(n)
        n *= 2
    if len(sizes) < 3:
        raise ValueError("need at least three doublings")
    means, ses, mom = [], [], []
    for n in sizes:
        r = estimate_mean(x[:n])
        means.append(r.estimate)
        ses.append(r.stderr)
        mom.append(float(np.median([b.mean() for b in np.array_split(x[:n], n_blocks)])))
    mid = len(sizes) // 2
    g1 = mom[mid] - mom[0]
    g2 = mom[-1] - mom[mid]
    growth = g2 / abs(mom[-1]) if mom[-1] != 0 else 0.0
    flagged = bool(growth > growth_tol and g2 >= 0.5 * g1)
    return DoublingStudy(sizes, means, ses, mom, float(growth), flagged, {"first_half": g1, "second_half": g2})


# --------------------------------------------------------------------------
# refinement studies

def refinement_study(f: PathFunctional, phi: PathFunctional, partitions: Sequence[Partition],
                     paths: PathEnsemble, eps: float, reference: GepElement | None = None,
                     thresholds: Thresholds | None = None, check: bool = True) -> ConvergenceReport:
    """Cauchy-in-probability study of Riemann sums over nested partitions.

    Finer partitions are evaluated on Brownian-bridge refinements of
    ``paths``, so every level sees the same underlying Brownian paths.
    ``reference`` (on the finest grid, or on ``paths.grid``) adds per-level L²
    distances to a candidate limit.
    """
    th = thresholds or Thresholds(eps=eps)
    th = Thresholds(**{**th.__dict__, "eps": eps})
    if len(partitions) < 3:
        raise ValueError("a refinement study needs at least three partitions")
    for coarse, fine in zip(partitions, partitions[1:]):
        if not fine.refines(coarse):
            raise ValueError("partitions must be nested")

    chain = [paths]
    level_of = []
    for part in partitions:
        while True:
            try:
                _check_partition(part, chain[-1].grid)
                break
            except ValueError:
                if len(chain) > 14:
                    raise
                chain.append(chain[-1].refine())
        level_of.append(len(chain) - 1)
    finest = chain[-1]
    grids = [e.grid for e in chain]

    if check:
        for part, lev in zip(partitions[:1] + partitions[-1:], level_of[:1] + level_of[-1:]):
            view = PathView(grids[lev], chain[lev].block(0, min(8, paths.n_paths)))
            for t in sorted({part.points[0], part.points[len(part.points) // 2], part.points[-1]}):
                _spot_check(f, t, view, paths.seed)
                _spot_check(phi, t, view, paths.seed)

    ref_level = None
    if reference is not None:
        ref_level = grids.index(reference.grid) if reference.grid in grids else None
        if ref_level is None:
            raise GridMismatch("reference grid is not a level of the refinement chain")

    def work(r):
        Zs = list(finest.iter_levels(*r))
        Zs = Zs[len(Zs) - len(chain):]
        views = [PathView(g, Z) for g, Z in zip(grids, Zs)]
        sums = np.stack([_riemann_block(f, phi, part, views[lev]) for part, lev in zip(partitions, level_of)], axis=1)
        ref = reference.evaluate(Zs[ref_level])[:, None] if reference is not None else np.zeros((r[1] - r[0], 0))
        return np.concatenate([sums, ref], axis=1)

    ranges = finest.block_ranges(max(1, 2_000_000 // finest.grid.m))
    nthreads = min(_threads(), len(ranges))
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            parts = list(pool.map(work, ranges))
    else:
        parts = [work(r) for r in ranges]
    table = np.concatenate(parts, axis=0)
    S = table[:, : len(partitions)]

    n = S.shape[0]
    probs, bounds = [], []
    for k in range(len(partitions) - 1):
        hits = int(np.count_nonzero(np.abs(S[:, k + 1] - S[:, k]) > eps))
        probs.append(hits / n)
        bounds.append(proportion_bounds(hits, n, th.confidence))
    tail = slice(-max(1, th.window - 1), None)
    stat = max(probs[tail])
    lower = max(b[0] for b in bounds[tail])
    upper = max(b[1] for b in bounds[tail])
    decaying = is_decaying(probs[tail])
    stage = Stage("riemann sums (in probability)", stat, th.eta, judge(lower, upper, th.eta, decaying),
                  lower=lower, upper=upper, increments=probs,
                  detail={"meshes": [p.mesh for p in partitions], "eps": eps,
                          "monotone": bool(all(b <= a for a, b in zip(probs, probs[1:])))})
    stages = [stage]
    limit = summarize(S[:, -1])
    if reference is not None:
        dists = [estimate_lp(S[:, k] - table[:, -1], 2.0) for k in range(len(partitions))]
        limit["l2_distance"] = [d.estimate for d in dists]
        limit["l2_distance_stderr"] = [d.stderr for d in dists]
    return ConvergenceReport("D2.1", 2.0, stages, combine(stages), limit, paths.seed, paths.n_paths,
                             {"eps": eps, "eta": th.eta, "confidence": th.confidence,
                              "levels": level_of, "generator": paths.generator})
