"""Convergence reports and the three-valued verdict rule shared by the closure
drivers and refinement studies."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

CERTIFIED = "certified"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"

#: tags a report may carry (closure definitions, Riemann-sum limits, S-transform harness)
DEFINITIONS = ("D2.1", "D3.2", "D3.6", "D3.7", "D3.10", "P2.4", "P3.4")


@dataclass
class Thresholds:
    lp_tol: float = 5e-2      # L^p Cauchy spread
    path_tol: float = 5e-2    # pathwise Cauchy spread
    eps: float = 1e-2         # event size in P(|X_n - X_m| > eps)
    eta: float = 1e-2         # admissible probability of that event
    confidence: float = 0.99
    window: int = 3           # tail members compared

    @property
    def z(self) -> float:
        return float(stats.norm.ppf(0.5 + self.confidence / 2))


@dataclass
class Stage:
    name: str
    statistic: float
    threshold: float
    verdict: str
    stderr: float = 0.0
    lower: float | None = None
    upper: float | None = None
    increments: list[float] = field(default_factory=list)
    detail: dict = field(default_factory=dict)


def is_decaying(increments: Sequence[float], floor: float = 1e-14) -> bool:
    """Tail increments shrink (or vanish); vacuous with fewer than two."""
    inc = [abs(x) for x in increments]
    if len(inc) < 2 or max(inc) <= floor:
        return True
    return inc[-1] < inc[0]


def judge(lower: float, upper: float, threshold: float, decaying: bool) -> str:
    if upper <= threshold and decaying:
        return CERTIFIED
    if lower > threshold and not decaying:
        return REFUTED
    return INCONCLUSIVE


def combine(stages: Sequence[Stage]) -> str:
    verdicts = [s.verdict for s in stages]
    if REFUTED in verdicts:
        return REFUTED
    if verdicts and all(v == CERTIFIED for v in verdicts):
        return CERTIFIED
    return INCONCLUSIVE


def proportion_bounds(k: int, n: int, confidence: float) -> tuple[float, float]:
    """Two-sided Clopper-Pearson interval for a binomial proportion."""
    alpha = 1 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def summarize(samples: np.ndarray) -> dict:
    x = np.asarray(samples, dtype=float)
    n = x.size
    return {
        "n": int(n),
        "mean": float(np.mean(x)),
        "stderr": float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
        "std": float(np.std(x, ddof=1)) if n > 1 else 0.0,
        "median": float(np.median(x)),
        "q05": float(np.quantile(x, 0.05)),
        "q95": float(np.quantile(x, 0.95)),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


@dataclass
class ConvergenceReport:
    definition: str
    p: float
    stages: list[Stage]
    verdict: str
    limit: dict = field(default_factory=dict)
    seed: int | None = None
    n_paths: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.definition not in DEFINITIONS:
            raise ValueError(f"unknown definition tag {self.definition!r}")

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_table(self) -> str:
        lines = [
            f"### {self.definition}, p = {self.p:g}: **{self.verdict}**",
            "",
            "| stage | statistic | stderr | threshold | increments | verdict |",
            "|---|---|---|---|---|---|",
        ]
        for s in self.stages:
            inc = ", ".join(f"{x:.3g}" for x in s.increments)
            lines.append(f"| {s.name} | {s.statistic:.4g} | {s.stderr:.2g} | {s.threshold:.3g} | {inc} | {s.verdict} |")
        if self.limit:
            lines.append("")
            lines.append("limit: " + ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                               for k, v in self.limit.items() if not isinstance(v, (dict, list))))
        return "\n".join(lines)
