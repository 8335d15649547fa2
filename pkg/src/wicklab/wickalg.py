"""Exact algebra of Gaussian exponential-polynomial random variables.

Every element lives on a :class:`~wicklab.stepfn.Grid` with cells
``(t_{i-1}, t_i]`` and standardized increments ``Z_i = ΔB_i / sqrt(Δt_i)``.
An element is a finite sum of terms

    exp(<a, Z> - |a|^2 / 2) * P(Z)

where ``a`` is a per-cell drift vector and ``P`` a sparse polynomial. Wiener
integrals, Wick exponentials, Hermite polynomials of Wiener integrals and all
their ordinary and Wick products stay inside this class, and expectations and
S-transforms have closed forms.

Polynomials are dicts ``{monomial: coeff}``; a monomial is a tuple of
``(cell, power)`` pairs sorted by cell, ``()`` being the constant monomial.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cache

import numpy as np

from .stepfn import Grid, StepFunction, indicator, inner

Mono = tuple  # tuple[tuple[int, int], ...]
Poly = dict  # dict[Mono, float]

DEFAULT_MAX_DEGREE = 64
DEFAULT_MAX_MONOMIALS = 200_000
DROP_REL = 1e-14
DRIFT_DECIMALS = 10


class BudgetExceeded(RuntimeError):
    """A result would exceed the configured degree or size budget."""


class GridMismatch(ValueError):
    pass


_budget = contextvars.ContextVar("wicklab_budget", default=(DEFAULT_MAX_DEGREE, DEFAULT_MAX_MONOMIALS))


@contextlib.contextmanager
def budget(max_degree: int = DEFAULT_MAX_DEGREE, max_monomials: int = DEFAULT_MAX_MONOMIALS):
    """Temporarily change the degree/size budget for the current context."""
    token = _budget.set((max_degree, max_monomials))
    try:
        yield
    finally:
        _budget.reset(token)


# --------------------------------------------------------------------------
# sparse polynomials

def _mono_mul(m1: Mono, m2: Mono) -> Mono:
    if not m1:
        return m2
    if not m2:
        return m1
    out = []
    i = j = 0
    while i < len(m1) and j < len(m2):
        c1, p1 = m1[i]
        c2, p2 = m2[j]
        if c1 == c2:
            out.append((c1, p1 + p2))
            i += 1
            j += 1
        elif c1 < c2:
            out.append(m1[i])
            i += 1
        else:
            out.append(m2[j])
            j += 1
    out.extend(m1[i:])
    out.extend(m2[j:])
    return tuple(out)


def _degree(m: Mono) -> int:
    return sum(p for _, p in m)


def poly_degree(P: Poly) -> int:
    return max((_degree(m) for m in P), default=0)


def _poly_mul(P: Poly, Q: Poly, scale: float = 1.0) -> Poly:
    out: Poly = {}
    for m1, c1 in P.items():
        for m2, c2 in Q.items():
            m = _mono_mul(m1, m2)
            out[m] = out.get(m, 0.0) + scale * c1 * c2
    return out


def _poly_add_into(acc: Poly, P: Poly, scale: float = 1.0) -> None:
    for m, c in P.items():
        acc[m] = acc.get(m, 0.0) + scale * c


def _expand(P: Poly, rule) -> Poly:
    """Apply a per-coordinate linear substitution ``z_i^k -> sum c_j z_i^j``.

    ``rule(cell, power)`` returns a list of ``(new_power, coeff)`` pairs or
    ``None`` to leave the factor untouched.
    """
    out: Poly = {}
    for mono, c in P.items():
        partial: list[tuple[list, float]] = [([], c)]
        for cell, power in mono:
            repl = rule(cell, power)
            if repl is None:
                partial = [(m + [(cell, power)], v) for m, v in partial]
                continue
            nxt = []
            for m, v in partial:
                for q, w in repl:
                    if w == 0.0:
                        continue
                    nxt.append((m + [(cell, q)] if q else m, v * w))
            partial = nxt
        for m, v in partial:
            key = tuple(m)
            out[key] = out.get(key, 0.0) + v
    return out


def _shift(P: Poly, a: np.ndarray) -> Poly:
    """``P(z + a)``."""
    nz = {i for i in np.flatnonzero(a)}
    if not nz:
        return dict(P)

    def rule(cell, power):
        if cell not in nz:
            return None
        x = float(a[cell])
        return [(j, math.comb(power, j) * x ** (power - j)) for j in range(power + 1)]

    return _expand(P, rule)


@cache
def _mono_to_herm_table(n: int, t: float = 1.0) -> tuple[tuple[int, float], ...]:
    # x^n = sum_k n! / (k! (n-2k)! 2^k) t^k h^{n-2k}_t(x)
    return tuple(
        (n - 2 * k, math.factorial(n) / (math.factorial(k) * math.factorial(n - 2 * k) * 2**k) * t**k)
        for k in range(n // 2 + 1)
    )


@cache
def _herm_to_mono_table(n: int, t: float = 1.0) -> tuple[tuple[int, float], ...]:
    # h^n_t(x) = sum_k (-1)^k n! / (k! (n-2k)! 2^k) t^k x^{n-2k}
    return tuple(
        (n - 2 * k, (-1) ** k * math.factorial(n) / (math.factorial(k) * math.factorial(n - 2 * k) * 2**k) * t**k)
        for k in range(n // 2 + 1)
    )


def _to_hermite(P: Poly) -> Poly:
    return _expand(P, lambda cell, power: list(_mono_to_herm_table(power)))


def _from_hermite(P: Poly) -> Poly:
    return _expand(P, lambda cell, power: list(_herm_to_mono_table(power)))


# --------------------------------------------------------------------------
# Hermite polynomials with variance parameter

@dataclass(frozen=True)
class HermiteCoeffs:
    """``sum_k coeffs[k] * h^k_t(x)``."""

    t: float
    coeffs: tuple[float, ...]

    def __call__(self, x):
        return sum(c * hermite_eval(k, self.t, x) for k, c in enumerate(self.coeffs))


def hermite_eval(k: int, t: float, x):
    """``h^k_t(x)`` via ``h^{k+1} = x h^k - k t h^{k-1}``."""
    if k < 0 or t < 0:
        raise ValueError("need k >= 0 and t >= 0")
    h_prev, h = 0.0 * x, 1.0 + 0.0 * x
    for j in range(k):
        h_prev, h = h, x * h - j * t * h_prev
    return h


def monomial_to_hermite(n: int, t: float) -> HermiteCoeffs:
    """Coefficients of ``x^n`` in the basis ``h^k_t``."""
    if n < 0 or t < 0:
        raise ValueError("need n >= 0 and t >= 0")
    c = [0.0] * (n + 1)
    for k, v in _mono_to_herm_table(n, float(t)):
        c[k] += v
    return HermiteCoeffs(float(t), tuple(c))


def hermite_to_monomial(k: int, t: float) -> tuple[float, ...]:
    """Monomial coefficients ``c_j`` with ``h^k_t(x) = sum_j c_j x^j``."""
    c = [0.0] * (k + 1)
    for j, v in _herm_to_mono_table(k, float(t)):
        c[j] += v
    return tuple(c)


# --------------------------------------------------------------------------
# elements

@dataclass(frozen=True)
class Term:
    drift: np.ndarray
    poly: Poly

    @property
    def drift_key(self) -> tuple:
        return tuple(np.round(self.drift, DRIFT_DECIMALS) + 0.0)

    def is_pure_exponential(self) -> bool:
        return set(self.poly) <= {()}


@cache
def _power_size(p: int) -> float:
    # sqrt(E[Z^{2p}]) = sqrt((2p-1)!!)
    return math.exp(0.5 * (math.lgamma(2 * p + 1) - p * math.log(2.0) - math.lgamma(p + 1)))


def _mono_size(m: Mono) -> float:
    out = 1.0
    for _, p in m:
        out *= _power_size(p)
    return out


def _canonical(grid: Grid, terms: Iterable[tuple[np.ndarray, Poly]]) -> tuple[Term, ...]:
    groups: dict[tuple, list] = {}
    for drift, poly in terms:
        key = tuple(np.round(drift, DRIFT_DECIMALS) + 0.0)
        if key in groups:
            _poly_add_into(groups[key][1], poly)
        else:
            groups[key] = [np.asarray(drift, dtype=float), dict(poly)]

    # compare coefficients by the L² size of their monomials, since E[Z^{2p}] grows like (2p-1)!!
    biggest = max((abs(c) * _mono_size(m) for _, p in groups.values() for m, c in p.items()), default=0.0)
    cut = DROP_REL * biggest
    max_degree, max_monomials = _budget.get()
    out = []
    size = 0
    for key in sorted(groups):
        drift, poly = groups[key]
        poly = {m: c for m, c in poly.items() if abs(c) * _mono_size(m) > cut}
        if not poly:
            continue
        if poly_degree(poly) > max_degree:
            raise BudgetExceeded(f"polynomial degree {poly_degree(poly)} exceeds budget {max_degree}")
        size += len(poly)
        drift = drift.copy()
        drift.setflags(write=False)
        out.append(Term(drift, poly))
    if size > max_monomials:
        raise BudgetExceeded(f"{size} monomials exceed budget {max_monomials}")
    return tuple(out)


class GepElement:
    """Gaussian exponential-polynomial random variable on a grid (immutable)."""

    __slots__ = ("grid", "terms")

    def __init__(self, grid: Grid, terms: Iterable = (), *, _canonical_ok: bool = False):
        object.__setattr__(self, "grid", grid)
        if _canonical_ok:
            object.__setattr__(self, "terms", tuple(terms))
        else:
            raw = []
            for t in terms:
                drift, poly = (t.drift, t.poly) if isinstance(t, Term) else t
                drift = np.asarray(drift, dtype=float)
                if drift.shape != (grid.m,):
                    raise ValueError(f"drift must have length {grid.m}")
                raw.append((drift, poly))
            object.__setattr__(self, "terms", _canonical(grid, raw))

    def __setattr__(self, *_):
        raise AttributeError("GepElement is immutable")

    # -- constructors
    @classmethod
    def constant(cls, c: float, grid: Grid) -> GepElement:
        return cls(grid, [(np.zeros(grid.m), {(): float(c)})])

    @classmethod
    def zero(cls, grid: Grid) -> GepElement:
        return cls(grid, [])

    @classmethod
    def polynomial(cls, poly: Poly, grid: Grid) -> GepElement:
        return cls(grid, [(np.zeros(grid.m), poly)])

    # -- structure
    @property
    def degree(self) -> int:
        return max((poly_degree(t.poly) for t in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def is_wick_exponential(self) -> bool:
        """A single term ``c * exp^◇(<a, Z>)``."""
        return len(self.terms) == 1 and self.terms[0].is_pure_exponential()

    def cells_used(self) -> set[int]:
        used: set[int] = set()
        for t in self.terms:
            used.update(int(i) for i in np.flatnonzero(t.drift))
            for mono in t.poly:
                used.update(cell for cell, _ in mono)
        return used

    def _check(self, other: GepElement) -> None:
        if self.grid != other.grid:
            raise GridMismatch("elements live on different grids")

    # -- arithmetic
    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = GepElement.constant(other, self.grid)
        self._check(other)
        return GepElement(self.grid, [(t.drift, t.poly) for t in self.terms + other.terms])

    __radd__ = __add__

    def scale(self, c: float) -> GepElement:
        return GepElement(self.grid, [(t.drift, {m: c * v for m, v in t.poly.items()}) for t in self.terms])

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return self.scale(float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c: float):
        return self.scale(1.0 / c)

    def __pow__(self, n: int):
        return power(self, n)

    def __eq__(self, other):
        return isinstance(other, GepElement) and allclose(self, other, 0.0)

    __hash__ = None

    def __repr__(self) -> str:
        return f"GepElement({format_element(self)})"

    # -- evaluation
    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        """Pathwise values for standardized increments ``Z`` of shape (n, m)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.grid.m:
            raise GridMismatch(f"paths have {Z.shape[1]} cells, element has {self.grid.m}")
        out = np.zeros(Z.shape[0])
        for t in self.terms:
            vals = np.zeros(Z.shape[0])
            for mono, c in t.poly.items():
                v = np.full(Z.shape[0], c)
                for cell, p in mono:
                    v = v * Z[:, cell] ** p
                vals += v
            if np.any(t.drift):
                vals = vals * np.exp(Z @ t.drift - 0.5 * float(t.drift @ t.drift))
            out += vals
        return out

    # -- serialization
    def to_json(self) -> dict:
        return {
            "grid": list(self.grid.times),
            "terms": [
                {
                    "drift": [float(x) for x in t.drift],
                    "poly": {_mono_key(m): c for m, c in t.poly.items()},
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> GepElement:
        grid = Grid(tuple(data["grid"]))
        terms = [(np.asarray(t["drift"], float), {_parse_mono(k): float(c) for k, c in t["poly"].items()})
                 for t in data["terms"]]
        return cls(grid, terms)


def _mono_key(m: Mono) -> str:
    return ",".join(f"{c}:{p}" for c, p in m)


def _parse_mono(key: str) -> Mono:
    if not key:
        return ()
    return tuple(sorted((int(c), int(p)) for c, p in (part.split(":") for part in key.split(","))))


# --------------------------------------------------------------------------
# generators

def wiener(h: StepFunction, grid: Grid) -> GepElement:
    """``I(h) = sum_i h_i sqrt(Δt_i) Z_i``."""
    vals = grid.cell_values(h) * grid.sqrt_dt
    poly = {((i, 1),): float(v) for i, v in enumerate(vals) if v != 0.0}
    return GepElement(grid, [(np.zeros(grid.m), poly)])


def brownian(t: float, grid: Grid) -> GepElement:
    """``B_t = I(1_{(0, t]})``."""
    if t == 0:
        return GepElement.zero(grid)
    return wiener(indicator(0.0, t), grid)


def wick_exp(g: StepFunction, grid: Grid) -> GepElement:
    """``exp^◇(I(g)) = exp(I(g) - ||g||^2 / 2)``."""
    drift = grid.cell_values(g) * grid.sqrt_dt
    return GepElement(grid, [(drift, {(): 1.0})])


# --------------------------------------------------------------------------
# products

def mul(X: GepElement, Y: GepElement) -> GepElement:
    """Pointwise product."""
    X._check(Y)
    raw = []
    for s in X.terms:
        for t in Y.terms:
            raw.append((s.drift + t.drift, _poly_mul(s.poly, t.poly, math.exp(float(s.drift @ t.drift)))))
    return GepElement(X.grid, raw)


def power(X: GepElement, n: int) -> GepElement:
    if n < 0:
        raise ValueError("negative power")
    result = GepElement.constant(1.0, X.grid)
    base = X
    while n:
        if n & 1:
            result = mul(result, base)
        n >>= 1
        if n:
            base = mul(base, base)
    return result


def _to_sform(t: Term) -> Poly:
    # S(exp^◇(a) P)(b) = e^{<a,b>} W(b) with W(c) = Q(a + c), Q = Hermite coefficients of P
    return _shift(_to_hermite(t.poly), t.drift)


def _from_sform(drift: np.ndarray, W: Poly) -> Poly:
    return _from_hermite(_shift(W, -drift))


def wick_mul(X: GepElement, Y: GepElement) -> GepElement:
    """Wick product, i.e. the element whose S-transform is ``S(X) S(Y)``.

    Each term ``exp^◇(a) P(Z)`` is rewritten as ``exp^◇(a) ◇ R`` with ``R`` in
    Hermite form (a translation by ``a``); Hermite basis elements multiply by
    adding exponents, and Wick exponentials multiply by adding drifts.
    """
    X._check(Y)
    xs = [(t.drift, _to_sform(t)) for t in X.terms]
    ys = [(t.drift, _to_sform(t)) for t in Y.terms]
    raw = []
    for a, Wa in xs:
        for b, Wb in ys:
            d = a + b
            raw.append((d, _from_sform(d, _poly_mul(Wa, Wb))))
    return GepElement(X.grid, raw)


def wick_power(X: GepElement, k: int) -> GepElement:
    result = GepElement.constant(1.0, X.grid)
    for _ in range(k):
        result = wick_mul(result, X)
    return result


# --------------------------------------------------------------------------
# expectations and transforms

def _shifted_moments(a: float, n: int) -> list[float]:
    # E[(Z + a)^k], k = 0..n, via E[(Z+a)^{k+1}] = a E[(Z+a)^k] + k E[(Z+a)^{k-1}]
    mu = [1.0, a]
    for k in range(1, n):
        mu.append(a * mu[k] + k * mu[k - 1])
    return mu[: n + 1]


def expect(X: GepElement) -> float:
    """``E[X]`` using ``E[exp^◇(<a,Z>) P(Z)] = E[P(Z + a)]``."""
    total = 0.0
    for t in X.terms:
        deg = poly_degree(t.poly)
        cache: dict[int, list[float]] = {}
        for mono, c in t.poly.items():
            v = c
            for cell, p in mono:
                if cell not in cache:
                    cache[cell] = _shifted_moments(float(t.drift[cell]), deg)
                v *= cache[cell][p]
                if v == 0.0:
                    break
            total += v
    return total


def moment(X: GepElement, n: int) -> float:
    """``E[X^n]`` for integer ``n >= 1``."""
    if n < 1:
        raise ValueError("moment order must be >= 1")
    return expect(power(X, n))


def s_transform(X: GepElement, v: StepFunction) -> float:
    """``(SX)(v) = E[X exp^◇(I(v))]``."""
    return expect(mul(X, wick_exp(v, X.grid)))


# --------------------------------------------------------------------------
# Hermite / Taylor constructions

def hermite_element(k: int, f: StepFunction, grid: Grid) -> GepElement:
    """``h^k_{||f||^2}(I(f))`` built by the three-term recursion."""
    x = wiener(f, grid)
    t = inner(f, f)
    h_prev, h = GepElement.zero(grid), GepElement.constant(1.0, grid)
    for j in range(k):
        h_prev, h = h, mul(x, h) - h_prev.scale(j * t)
    return h


def wick_exp_taylor(g: StepFunction, grid: Grid, order: int) -> GepElement:
    """``order!`` times the ``w^order`` coefficient of ``w -> exp^◇(I(w g))``.

    Expands ``exp(w I(g)) exp(-w^2 ||g||^2 / 2)`` as a product of power
    series; no Hermite recursion is involved.
    """
    x = wiener(g, grid)
    c = -0.5 * inner(g, g)
    out = GepElement.zero(grid)
    for m in range(order // 2 + 1):
        j = order - 2 * m
        coeff = math.factorial(order) / (math.factorial(j) * math.factorial(m)) * c**m
        out = out + power(x, j).scale(coeff)
    return out


# --------------------------------------------------------------------------
# Malliavin derivative and filtration predicates

def malliavin(X: GepElement):
    """``D_t X`` as an :class:`ElementaryProcess` with one summand per cell.

    On cell ``i``, ``D_t`` acts on ``exp^◇(<a,Z>) P(Z)`` as
    ``exp^◇(<a,Z>) (a_i P + ∂P/∂Z_i) / sqrt(Δt_i)``.
    """
    grid = X.grid
    sq = grid.sqrt_dt
    per_cell: dict[int, list] = {}
    for t in X.terms:
        for i in sorted(X.cells_used()):
            poly: Poly = {}
            if t.drift[i] != 0.0:
                _poly_add_into(poly, t.poly, float(t.drift[i]))
            for mono, c in t.poly.items():
                for k, (cell, p) in enumerate(mono):
                    if cell == i:
                        rest = mono[:k] + (((cell, p - 1),) if p > 1 else ()) + mono[k + 1:]
                        poly[rest] = poly.get(rest, 0.0) + c * p
            if poly:
                per_cell.setdefault(i, []).append((t.drift, {m: c / sq[i] for m, c in poly.items()}))
    summands = []
    for i in sorted(per_cell):
        F = GepElement(grid, per_cell[i])
        if not F.is_zero():
            summands.append((F, grid.cell_indicator(i)))
    return ElementaryProcess(grid, tuple(summands))


def adapted_before(X: GepElement, t: float) -> bool:
    """True iff ``X`` only involves cells ending at or before ``t``."""
    k = X.grid.index_of(t)
    return all(i < k for i in X.cells_used())


def independent_after(X: GepElement, t: float) -> bool:
    """True iff ``X`` only involves cells starting at or after ``t``."""
    k = X.grid.index_of(t)
    return all(i >= k for i in X.cells_used())


# --------------------------------------------------------------------------
# comparison and display

def _match_terms(X: GepElement, Y: GepElement, drift_tol: float):
    left = list(X.terms)
    right = list(Y.terms)
    pairs = []
    used = [False] * len(right)
    for s in left:
        hit = None
        for j, t in enumerate(right):
            if not used[j] and np.max(np.abs(s.drift - t.drift), initial=0.0) <= drift_tol:
                hit = j
                break
        if hit is None:
            pairs.append((s.poly, {}))
        else:
            used[hit] = True
            pairs.append((s.poly, right[hit].poly))
    pairs += [({}, t.poly) for j, t in enumerate(right) if not used[j]]
    return pairs


def max_coeff_diff(X: GepElement, Y: GepElement, drift_tol: float = 1e-9) -> float:
    """Largest coefficient difference after matching terms by drift."""
    X._check(Y)
    worst = 0.0
    for p, q in _match_terms(X, Y, drift_tol):
        for m in set(p) | set(q):
            worst = max(worst, abs(p.get(m, 0.0) - q.get(m, 0.0)))
    return worst


def coeff_scale(X: GepElement) -> float:
    return max((abs(c) for t in X.terms for c in t.poly.values()), default=0.0)


def allclose(X: GepElement, Y: GepElement, tol: float = 1e-9) -> bool:
    """Coefficient-wise equality up to ``tol * max(1, coefficient scale)``."""
    if X.grid != Y.grid:
        return False
    scale = max(1.0, coeff_scale(X), coeff_scale(Y))
    return max_coeff_diff(X, Y) <= tol * scale


def _fmt(x: float) -> str:
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return str(int(r))
    return f"{x:.6g}"


def _cell_name(grid: Grid, i: int) -> str:
    lo, hi = grid.cells()[i]
    return f"B_{_fmt(hi)}" if lo == 0 else f"(B_{_fmt(hi)} − B_{_fmt(lo)})"


def _join_signed(parts: Sequence[tuple[float, str]]) -> str:
    out = ""
    for k, (c, body) in enumerate(parts):
        mag = abs(c)
        if body:
            piece = body if abs(mag - 1) < 1e-12 else f"{_fmt(mag)}·{body}"
        else:
            piece = _fmt(mag)
        if k == 0:
            out = ("−" if c < 0 else "") + piece
        else:
            out += (" − " if c < 0 else " + ") + piece
    return out or "0"


def format_element(X: GepElement) -> str:
    """Human-readable form in Brownian increments, e.g. ``exp^◇(B_1)·(B_1 − 1)``."""
    grid = X.grid
    sq = grid.sqrt_dt
    if X.is_zero():
        return "0"
    rendered = []
    for t in X.terms:
        monos = []
        for mono, c in sorted(t.poly.items(), key=lambda kv: (-_degree(kv[0]), kv[0])):
            coeff = c
            factors = []
            for cell, p in mono:
                coeff /= sq[cell] ** p
                name = _cell_name(grid, cell)
                factors.append(name if p == 1 else f"{name}^{p}")
            monos.append((coeff, "·".join(factors)))
        poly_s = _join_signed(monos)
        if not np.any(t.drift):
            rendered.append(poly_s)
            continue
        lin = [(float(t.drift[i] / sq[i]), _cell_name(grid, i)) for i in np.flatnonzero(t.drift)]
        ex = f"exp^◇({_join_signed(lin)})"
        if set(t.poly) == {()}:
            c = t.poly[()]
            rendered.append(ex if abs(c - 1) < 1e-12 else f"{_fmt(c)}·{ex}")
        elif len(monos) == 1:
            rendered.append(f"{poly_s}·{ex}")
        else:
            rendered.append(f"{ex}·({poly_s})")
    return " + ".join(rendered)


# --------------------------------------------------------------------------
# elementary processes

@dataclass(frozen=True)
class ElementaryProcess:
    """``u_t = sum_j F_j h_j(t)`` with random ``F_j`` and step functions ``h_j``."""

    grid: Grid
    summands: tuple = ()

    def __post_init__(self):
        summands = tuple((F, h) for F, h in self.summands)
        for F, h in summands:
            if F.grid != self.grid:
                raise GridMismatch("summand lives on another grid")
            if not self.grid.resolves(h):
                raise ValueError(f"{h!r} is not resolved on the grid")
        object.__setattr__(self, "summands", summands)

    @classmethod
    def single(cls, F: GepElement, h: StepFunction) -> ElementaryProcess:
        return cls(F.grid, ((F, h),))

    @classmethod
    def wick_exp_tensor(cls, g: StepFunction, h: StepFunction, grid: Grid) -> ElementaryProcess:
        return cls(grid, ((wick_exp(g, grid), h),))

    def in_exp_span(self) -> bool:
        """Membership in the span of ``exp^◇(I(g)) ⊗ h``."""
        return all(F.is_wick_exponential() or F.is_zero() for F, _ in self.summands)

    def cell_elements(self) -> list[GepElement]:
        """The random value ``u`` takes on each grid cell."""
        out = []
        vals = [self.grid.cell_values(h) for _, h in self.summands]
        for i in range(self.grid.m):
            parts = [(F.terms, v[i]) for (F, _), v in zip(self.summands, vals) if v[i] != 0.0]
            raw = [(t.drift, {m: c * w for m, c in t.poly.items()}) for terms, w in parts for t in terms]
            out.append(GepElement(self.grid, raw))
        return out

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        """Per-path, per-cell values, shape (n, m)."""
        Z = np.atleast_2d(Z)
        out = np.zeros((Z.shape[0], self.grid.m))
        for F, h in self.summands:
            out += np.outer(F.evaluate(Z), self.grid.cell_values(h))
        return out

    def __add__(self, other: ElementaryProcess) -> ElementaryProcess:
        if other.grid != self.grid:
            raise GridMismatch("processes live on different grids")
        return ElementaryProcess(self.grid, self.summands + other.summands)

    def scale(self, c: float) -> ElementaryProcess:
        return ElementaryProcess(self.grid, tuple((F.scale(c), h) for F, h in self.summands))

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other: ElementaryProcess) -> ElementaryProcess:
        return self + (-other)

    def __mul__(self, c: float) -> ElementaryProcess:
        return self.scale(c)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        return {
            "grid": list(self.grid.times),
            "summands": [{"F": F.to_json(), "h": h.to_json()} for F, h in self.summands],
        }

    @classmethod
    def from_json(cls, data: dict) -> ElementaryProcess:
        grid = Grid(tuple(data["grid"]))
        return cls(grid, tuple((GepElement.from_json(s["F"]), StepFunction.from_json(s["h"]))
                               for s in data["summands"]))
