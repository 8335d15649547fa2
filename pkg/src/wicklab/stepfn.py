"""Deterministic layer: step functions on left half-open intervals, grids and
partitions.

A :class:`StepFunction` is stored in canonical form: sorted, pairwise disjoint
pieces ``(lo, hi, value)`` meaning ``value * 1_{(lo, hi]}``, with zero pieces
dropped and touching pieces of equal value merged.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

#: breakpoints closer than this are treated as equal
TAU = 1e-12


def _snap(points: Iterable[float]) -> list[float]:
    """Sorted unique breakpoints, merging values within ``TAU``."""
    out: list[float] = []
    for x in sorted(points):
        if out and abs(x - out[-1]) <= TAU * max(1.0, abs(x)):
            continue
        out.append(x)
    return out


@dataclass(frozen=True)
class StepFunction:
    """Finite sum of ``value * 1_{(lo, hi]}``; use :func:`make_step` to build."""

    intervals: tuple[tuple[float, float, float], ...] = ()

    def __call__(self, t: float) -> float:
        for lo, hi, v in self.intervals:
            if lo < t <= hi:
                return v
        return 0.0

    @property
    def breakpoints(self) -> list[float]:
        return _snap(x for lo, hi, _ in self.intervals for x in (lo, hi))

    @property
    def support_end(self) -> float:
        return self.intervals[-1][1] if self.intervals else 0.0

    def is_zero(self) -> bool:
        return not self.intervals

    def __add__(self, other: StepFunction) -> StepFunction:
        return make_step(self.intervals + other.intervals)

    def __neg__(self) -> StepFunction:
        return StepFunction(tuple((lo, hi, -v) for lo, hi, v in self.intervals))

    def __sub__(self, other: StepFunction) -> StepFunction:
        return self + (-other)

    def __mul__(self, c: float) -> StepFunction:
        return make_step((lo, hi, c * v) for lo, hi, v in self.intervals)

    __rmul__ = __mul__

    def norm(self) -> float:
        return math.sqrt(inner(self, self))

    def to_json(self) -> list[dict]:
        return [{"lo": lo, "hi": hi, "value": v} for lo, hi, v in self.intervals]

    @classmethod
    def from_json(cls, data) -> StepFunction:
        if isinstance(data, str):
            data = json.loads(data)
        pieces = []
        for item in data:
            if isinstance(item, dict):
                pieces.append((item["lo"], item["hi"], item["value"]))
            else:
                lo, hi, v = item
                pieces.append((lo, hi, v))
        return make_step(pieces)

    def __repr__(self) -> str:
        if not self.intervals:
            return "StepFunction(0)"
        body = " + ".join(f"{v:g}*1({lo:g},{hi:g}]" for lo, hi, v in self.intervals)
        return f"StepFunction({body})"


def make_step(pieces: Iterable[Sequence[float]]) -> StepFunction:
    """Build the canonical step function ``sum value * 1_{(lo, hi]}``.

    Overlapping pieces add up.

    >>> make_step([(0, 2, 1), (1, 2, -1)])
    StepFunction(1*1(0,1])
    """
    raw = []
    for piece in pieces:
        lo, hi, v = (float(x) for x in piece)
        if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(v)):
            raise ValueError(f"non-finite piece {piece!r}")
        if lo < 0:
            raise ValueError(f"negative left endpoint in {piece!r}")
        if hi <= lo:
            raise ValueError(f"empty interval in {piece!r}")
        raw.append((lo, hi, v))
    if not raw:
        return StepFunction()

    pts = _snap(x for lo, hi, _ in raw for x in (lo, hi))
    vals = np.zeros(len(pts) - 1)
    arr = np.asarray(pts)
    for lo, hi, v in raw:
        i = int(np.argmin(np.abs(arr - lo)))
        j = int(np.argmin(np.abs(arr - hi)))
        vals[i:j] += v

    scale = max(1.0, float(np.max(np.abs(vals))))
    out: list[list[float]] = []
    for k, v in enumerate(vals):
        if abs(v) <= 1e-15 * scale:
            continue
        lo, hi = pts[k], pts[k + 1]
        if out and out[-1][1] == lo and out[-1][2] == v:
            out[-1][1] = hi
        else:
            out.append([lo, hi, float(v)])
    return StepFunction(tuple((lo, hi, v) for lo, hi, v in out))


def indicator(lo: float, hi: float, value: float = 1.0) -> StepFunction:
    return make_step([(lo, hi, value)])


def inner(g: StepFunction, h: StepFunction) -> float:
    """``∫ g h dλ`` over the common refinement (exact up to rounding)."""
    total = 0.0
    i = j = 0
    a, b = g.intervals, h.intervals
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += (hi - lo) * a[i][2] * b[j][2]
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return total


def restrict_before(g: StepFunction, t: float) -> StepFunction:
    """``g * 1_{[0, t)}`` (the point ``t`` itself is λ-null)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return make_step((lo, min(hi, t), v) for lo, hi, v in g.intervals if lo < t)


def restrict_after(g: StepFunction, t: float) -> StepFunction:
    """``g * 1_{(t, ∞)}``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return make_step((max(lo, t), hi, v) for lo, hi, v in g.intervals if hi > t)


@dataclass(frozen=True)
class Grid:
    """Time grid ``0 = t_0 < t_1 < ... < t_m``."""

    times: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(x) for x in self.times)
        if len(ts) < 2:
            raise ValueError("a grid needs at least one cell")
        if ts[0] != 0.0:
            raise ValueError("grid must start at 0")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("grid times must be strictly increasing")
        object.__setattr__(self, "times", ts)

    @classmethod
    def uniform(cls, horizon: float, m: int) -> Grid:
        return cls(tuple(horizon * k / m for k in range(m + 1)))

    @classmethod
    def dyadic(cls, horizon: float, level: int) -> Grid:
        return cls.uniform(horizon, 2**level)

    @property
    def m(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(np.asarray(self.times))

    @property
    def sqrt_dt(self) -> np.ndarray:
        return np.sqrt(self.dt)

    def cells(self) -> list[tuple[float, float]]:
        return list(zip(self.times[:-1], self.times[1:]))

    def index_of(self, t: float) -> int:
        """Index ``k`` with ``times[k] == t`` (within ``TAU``); ValueError otherwise."""
        arr = np.asarray(self.times)
        k = int(np.argmin(np.abs(arr - t)))
        if abs(arr[k] - t) > TAU * max(1.0, abs(t)):
            raise ValueError(f"{t} is not a grid point")
        return k

    def has_point(self, t: float) -> bool:
        try:
            self.index_of(t)
        except ValueError:
            return False
        return True

    def refine(self) -> Grid:
        """Split every cell at its midpoint."""
        ts = [self.times[0]]
        for a, b in self.cells():
            ts += [0.5 * (a + b), b]
        return Grid(tuple(ts))

    def cell_values(self, g: StepFunction) -> np.ndarray:
        """Per-cell values of ``g``; raises if ``g`` is not resolved on the grid."""
        vals = np.array([g(0.5 * (a + b)) for a, b in self.cells()])
        if not self.resolves(g):
            raise ValueError(f"{g!r} is not resolved on the grid")
        return vals

    def resolves(self, g: StepFunction) -> bool:
        if g.support_end > self.horizon * (1 + TAU) + TAU:
            return False
        return all(self.has_point(x) for x in g.breakpoints)

    def step(self, values: Sequence[float]) -> StepFunction:
        """Step function taking ``values[i]`` on cell ``i``."""
        if len(values) != self.m:
            raise ValueError("need one value per cell")
        return make_step((a, b, v) for (a, b), v in zip(self.cells(), values) if v != 0)

    def cell_indicator(self, i: int) -> StepFunction:
        a, b = self.cells()[i]
        return indicator(a, b)


@dataclass(frozen=True)
class Partition:
    """Points ``a = s_0 < ... < s_n = b`` of an interval ``[a, b]``."""

    points: tuple[float, ...]

    def __post_init__(self):
        ps = tuple(float(x) for x in self.points)
        if len(ps) < 2 or any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("partition points must be strictly increasing")
        if ps[0] < 0:
            raise ValueError("partition must lie in [0, inf)")
        object.__setattr__(self, "points", ps)

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> Partition:
        return cls(tuple(a + (b - a) * k / n for k in range(n + 1)))

    @property
    def a(self) -> float:
        return self.points[0]

    @property
    def b(self) -> float:
        return self.points[-1]

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.points)))

    def refine(self) -> Partition:
        ps = [self.points[0]]
        for a, b in zip(self.points, self.points[1:]):
            ps += [0.5 * (a + b), b]
        return Partition(tuple(ps))

    def refines(self, other: Partition) -> bool:
        """True iff every point of ``other`` is a point of ``self``."""
        mine = np.asarray(self.points)
        return all(np.min(np.abs(mine - x)) <= TAU * max(1.0, x) for x in other.points)


def common_grid(fs: Sequence[StepFunction], horizon: float) -> Grid:
    """Coarsest grid on ``[0, horizon]`` resolving every function in ``fs``."""
    pts = [0.0, float(horizon)]
    for f in fs:
        if f.support_end > horizon * (1 + TAU) + TAU:
            raise ValueError(f"horizon {horizon} does not cover {f!r}")
        pts += f.breakpoints
    return Grid(tuple(_snap(pts)))
