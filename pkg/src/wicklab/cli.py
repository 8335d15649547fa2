"""Command-line front end.

Exit codes: 0 pass, 1 failed check, 2 usage or parse error, 3 budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .convergence import Thresholds
from .integrate import (
    closure_ayedkuo,
    closure_skorokhod,
    s_residual,
    skorokhod_elementary,
)
from .mcsim import sample_paths
from .paperlab import SCENARIOS, random_step, run_scenario, vn_process
from .stepfn import Grid, StepFunction, common_grid
from .wickalg import (
    BudgetExceeded,
    ElementaryProcess,
    GepElement,
    format_element,
    wick_exp,
    wiener,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3
TAGS = ("D3.2", "D3.6", "D3.7", "D3.10")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    scenario: str | None = None
    spec: object = None
    tag: str | None = None
    p: float | None = None
    n_paths: int | None = None
    seed: int = 42
    mesh_levels: list[int] | None = None
    n_max: int | None = None
    tol: float | None = None
    expect: str | None = None
    out_dir: str = "reports"
    format: str = "json"

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# spec parsing

def _load_json(text: str, what: str):
    src = text
    if not text.lstrip().startswith(("{", "[")):
        path = Path(text.removeprefix("@"))
        try:
            src = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read {what} file {path}: {exc.strerror}") from None
    try:
        return json.loads(src)
    except json.JSONDecodeError as exc:
        raise UsageError(f"parse error in {what} at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _step(obj) -> StepFunction:
    try:
        return StepFunction.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad step function {obj!r}: {exc}") from None


def _collect_steps(F_spec, h_spec) -> list[StepFunction]:
    out = [_step(h_spec)]
    if isinstance(F_spec, dict):
        for key in ("wick_exp", "wiener"):
            if key in F_spec:
                out.append(_step(F_spec[key]))
    return out


def _element(F_spec, grid: Grid) -> GepElement:
    """``F`` as a number, ``{"constant": c}``, ``{"wick_exp": steps}``,
    ``{"wiener": steps}`` or a serialized GepElement."""
    if isinstance(F_spec, (int, float)):
        return GepElement.constant(float(F_spec), grid)
    if not isinstance(F_spec, dict):
        raise UsageError(f"bad random variable {F_spec!r}")
    try:
        if "constant" in F_spec:
            return GepElement.constant(float(F_spec["constant"]), grid)
        if "wick_exp" in F_spec:
            return wick_exp(_step(F_spec["wick_exp"]), grid).scale(float(F_spec.get("coeff", 1.0)))
        if "wiener" in F_spec:
            return wiener(_step(F_spec["wiener"]), grid).scale(float(F_spec.get("coeff", 1.0)))
        if "terms" in F_spec:
            X = GepElement.from_json(F_spec)
            if X.grid != grid:
                raise UsageError("serialized element lives on another grid")
            return X
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raise UsageError(f"unknown random variable spec {F_spec!r}")


def _summands(spec) -> list[dict]:
    if isinstance(spec, list):
        spec = {"summands": spec}
    if not isinstance(spec, dict) or not isinstance(spec.get("summands"), list):
        raise UsageError("process spec needs a 'summands' list")
    for s in spec["summands"]:
        if not isinstance(s, dict) or "F" not in s or "h" not in s:
            raise UsageError(f"summand {s!r} needs keys 'F' and 'h'")
    return spec["summands"]


def _auto_grid(specs: list) -> Grid:
    steps = [f for spec in specs for s in _summands(spec) for f in _collect_steps(s["F"], s["h"])]
    return common_grid(steps, max([f.support_end for f in steps] + [1.0]))


def parse_process(spec, grid: Grid | None = None) -> ElementaryProcess:
    """Build an ElementaryProcess from ``{"grid"?: times, "summands": [{"F": ..., "h": ...}]}``
    (a bare list of summands is accepted too). Without a grid, the coarsest
    grid resolving every step function is used."""
    summands = _summands(spec)
    if isinstance(spec, dict) and spec.get("grid") is not None:
        try:
            grid = Grid(tuple(spec["grid"]))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad grid: {exc}") from None
    grid = grid or _auto_grid([spec])
    try:
        return ElementaryProcess(grid, tuple((_element(s["F"], grid), _step(s["h"])) for s in summands))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_sequence(spec) -> list[ElementaryProcess]:
    """``{"builtin": "vn", "terms": N}`` or ``{"sequence": [process spec, ...]}``;
    explicit members share the coarsest grid resolving all of them."""
    if isinstance(spec, list):
        spec = {"sequence": spec}
    if not isinstance(spec, dict):
        raise UsageError("sequence spec must be an object")
    if "builtin" in spec:
        if spec["builtin"] != "vn":
            raise UsageError(f"unknown builtin sequence {spec['builtin']!r} (known: vn)")
        terms = int(spec.get("terms", 16))
        if terms < 1:
            raise UsageError("empty sequence")
        return [vn_process(n) for n in range(terms)]
    seq = spec.get("sequence")
    if not isinstance(seq, list) or not seq:
        raise UsageError("empty sequence")
    grid = Grid(tuple(spec["grid"])) if spec.get("grid") is not None else _auto_grid(seq)
    procs = [parse_process(s, grid) for s in seq]
    if any(u.grid != procs[0].grid for u in procs):
        raise UsageError("sequence members live on different grids")
    return procs


# --------------------------------------------------------------------------
# commands

def _write(cfg: RunConfig, stem: str, payload: dict, markdown: str, csv_text: str | None = None) -> list[Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {**payload, "run_config": cfg.to_dict()}
    files = [out / f"{stem}.json", out / f"{stem}.md"]
    files[0].write_text(json.dumps(payload, indent=2, ensure_ascii=False, default=str) + "\n", encoding="utf-8")
    files[1].write_text(markdown + "\n\nrun config: `" + json.dumps(cfg.to_dict(), default=str) + "`\n",
                        encoding="utf-8")
    if csv_text is not None:
        files.append(out / f"{stem}.csv")
        files[-1].write_text(csv_text, encoding="utf-8")
    return files


def _scenario_kwargs(cfg: RunConfig) -> dict:
    kw: dict = {"seed": cfg.seed}
    sid = cfg.scenario
    if sid in ("remark-2-6", "remark-3-8-iii", "theorem-2-3") and cfg.n_paths is not None:
        kw["n_paths"] = cfg.n_paths
    if sid == "wick-identities" and cfg.n_paths is not None:
        kw["trials"] = cfg.n_paths
    if sid == "remark-2-6" and cfg.p is not None:
        kw["p"] = cfg.p
    if sid == "remark-3-8-iii" and cfg.n_max is not None:
        kw["n_max"] = cfg.n_max
    if sid == "theorem-2-3":
        if cfg.mesh_levels is not None:
            kw["mesh_levels"] = cfg.mesh_levels
        if cfg.tol is not None:
            kw["target"] = cfg.tol
    return kw


def cmd_scenario(cfg: RunConfig) -> int:
    if cfg.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {cfg.scenario!r}; known: {', '.join(SCENARIOS)}")
    rep = run_scenario(cfg.scenario, **_scenario_kwargs(cfg))
    csv_text = rep.to_csv() if cfg.format == "csv" else None
    files = _write(cfg, cfg.scenario, rep.to_dict(), rep.to_markdown(), csv_text)
    shown = {"json": lambda: rep.to_json(indent=2), "md": rep.to_markdown, "csv": rep.to_csv}[cfg.format]()
    print(shown)
    print("wrote " + ", ".join(map(str, files)), file=sys.stderr)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_skorokhod(cfg: RunConfig, n_test: int = 20) -> int:
    u = parse_process(_load_json(cfg.spec, "process spec") if isinstance(cfg.spec, str) else cfg.spec)
    X = skorokhod_elementary(u)
    rng = np.random.default_rng(cfg.seed)
    res = max((abs(s_residual(X, u, random_step(rng, u.grid))) for _ in range(n_test)), default=0.0)
    tol = cfg.tol if cfg.tol is not None else 1e-10
    print(format_element(X))
    print(f"max |S-residual| over {n_test} test functions: {res:.3e}")
    payload = {"integral": format_element(X), "element": X.to_json(), "process": u.to_json(),
               "max_s_residual": res, "tolerance": tol, "passed": res <= tol}
    md = f"δ(u) = {format_element(X)}\n\nmax |S-residual| = {res:.3e} (tolerance {tol:g})"
    if cfg.out_dir:
        _write(cfg, "skorokhod", payload, md)
    return EXIT_PASS if res <= tol else EXIT_FAIL


def cmd_converge(cfg: RunConfig) -> int:
    if cfg.tag not in TAGS:
        raise UsageError(f"invalid tag {cfg.tag!r}; choose from {', '.join(TAGS)}")
    p = cfg.p if cfg.p is not None else 1.0
    if not math.isfinite(p) or p < 1 or (cfg.tag == "D3.2" and p <= 1) or (cfg.tag == "D3.6" and p != 2):
        need = {"D3.2": "p > 1", "D3.6": "p = 2"}.get(cfg.tag, "p >= 1")
        raise UsageError(f"p = {p:g} out of range for {cfg.tag} (need {need})")
    seq = parse_sequence(_load_json(cfg.spec, "sequence spec") if isinstance(cfg.spec, str) else cfg.spec)
    paths = sample_paths(seq[0].grid, cfg.n_paths or 100_000, cfg.seed)
    th = Thresholds() if cfg.tol is None else Thresholds(lp_tol=cfg.tol, path_tol=cfg.tol)
    if cfg.tag in ("D3.2", "D3.7"):
        rep = closure_skorokhod(seq, p, paths, th, definition=cfg.tag)
    else:
        rep = closure_ayedkuo(seq, p, paths, th, definition=cfg.tag)
    stem = f"converge-{cfg.tag}-p{p:g}"
    files = _write(cfg, stem, rep.to_dict(), rep.to_table(), None)
    print(rep.to_json(indent=2) if cfg.format == "json" else rep.to_table())
    print("wrote " + ", ".join(map(str, files)), file=sys.stderr)
    if cfg.expect is not None and rep.verdict != cfg.expect:
        return EXIT_FAIL
    return EXIT_PASS


# --------------------------------------------------------------------------
# argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _levels(text: str) -> list[int]:
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad mesh levels {text!r} (use 4..10 or 4,5,6)") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--paths", type=int, default=None, dest="n_paths",
                        help="Monte Carlo paths (trials for wick-identities)")
    common.add_argument("--mesh-levels", type=_levels, default=None, help="dyadic levels, e.g. 4..10")
    common.add_argument("--p", type=float, default=None)
    common.add_argument("--tol", type=float, default=None,
                        help="tolerance override (L2 target for theorem-2-3, L^p spread for converge)")
    common.add_argument("--n-max", type=int, default=None)
    common.add_argument("--out-dir", default=None)
    common.add_argument("--format", choices=("json", "md", "csv"), default=None)
    common.add_argument("--config", default=None, help="JSON RunConfig; flags override its values")

    ap = _Parser(prog="wicklab", description="Wick calculus and anticipating-integral verification")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("scenario", parents=[common], help="run a named reproduction scenario")
    s.add_argument("scenario", help=", ".join(SCENARIOS))
    k = sub.add_parser("skorokhod", parents=[common], help="Skorokhod integral of an elementary process")
    k.add_argument("spec", help="process JSON, or a path / @path to a JSON file")
    c = sub.add_parser("converge", parents=[common], help="closure convergence study")
    c.add_argument("spec", help="sequence JSON, or a path / @path to a JSON file")
    c.add_argument("--tag", required=True, help=", ".join(TAGS))
    c.add_argument("--expect", choices=("certified", "refuted", "inconclusive"), default=None,
                   help="exit 1 unless the verdict matches")
    return ap


def make_config(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config:
        base = _load_json(args.config, "config")
        if not isinstance(base, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(base) - set(RunConfig.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    flags = {k: v for k, v in vars(args).items() if v is not None and k in RunConfig.__dataclass_fields__}
    merged = {**base, **flags}
    merged["command"] = args.command
    if merged.get("out_dir") is None:
        merged["out_dir"] = "reports"
    if merged.get("format") is None:
        merged["format"] = "json"
    if merged.get("seed") is None:
        merged["seed"] = 42
    return RunConfig(**merged)


def main(argv: list[str] | None = None) -> int:
    if "WICKLAB_THREADS" in os.environ:
        try:
            int(os.environ["WICKLAB_THREADS"])
        except ValueError:
            print("error: WICKLAB_THREADS must be an integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        args = build_parser().parse_args(argv)
        cfg = make_config(args)
        cmd = {"scenario": cmd_scenario, "skorokhod": cmd_skorokhod, "converge": cmd_converge}[cfg.command]
        return cmd(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MemoryError:
        print("out of memory", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
