"""Command-line interface: ``entmap {fit,map,bench,selfcheck}``.

Data goes to files only; a one-line human summary goes to stdout and
diagnostics to stderr. Exit codes: 0 success, 1 error, 2 partial
success (solver hit ``--max-iter`` or a benchmark cell failed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from entmap import __version__
from entmap.bench import (
    ESTIMATORS,
    EpsRule,
    ExperimentConfig,
    GroundTruth,
    compare_grid,
    write_aggregate,
    write_results,
)
from entmap.core import PointCloud, read_points_csv, write_points_csv
from entmap.errors import EntmapError, InvalidArgumentError
from entmap.mapping import EntropicMapModel, eval_batch, fit
from entmap.selfcheck import run_selfcheck
from entmap.sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2

GRID_LIST_KEYS = {"n", "d", "map", "estimator"}
GRID_SCALAR_KEYS = {"eps", "seed", "repeats", "mc", "tol", "max-iter"}


def _err(msg: str) -> None:
    print(f"entmap: error: {msg}", file=sys.stderr)


def cmd_fit(args: argparse.Namespace) -> int:
    X = PointCloud.from_csv(args.source)
    Y = PointCloud.from_csv(args.target)
    if X.d != Y.d:
        raise InvalidArgumentError(f"dimension mismatch: source d={X.d}, target d={Y.d}")
    if args.eps is not None:
        eps = args.eps
    else:
        rule = EpsRule.parse("auto:" + args.eps_auto) if args.eps_auto else EpsRule()
        eps = rule.resolve(max(X.n, 2), X.d)
    model, report = fit(X, Y, eps, tol=args.tol, max_iter=args.max_iter)
    model.save(args.out)
    print(
        f"n={X.n} m={Y.n} d={X.d} eps={eps:.6g} iterations={report.iterations} "
        f"marginal_violation={report.marginal_violation:.3e} dual={report.dual_trace[-1]:.10g}"
    )
    if not report.converged:
        _err(f"max-iter {args.max_iter} reached before tolerance {args.tol}; model written anyway")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_map(args: argparse.Namespace) -> int:
    model = EntropicMapModel.load(args.model)
    Q = read_points_csv(args.queries)
    if Q.shape[0] == 0:
        out = np.zeros((0, model.d))
    else:
        out = eval_batch(model, Q)
    write_points_csv(args.out, out)
    print(f"mapped {out.shape[0]} points (d={model.d})")
    return EXIT_OK


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_grid(text: str) -> dict:
    """Parse ``key=v1,v2;key=v`` into a grid dictionary.

    List keys: ``n``, ``d``, ``map``, ``estimator``. Scalar keys: ``eps``
    (``auto``, ``auto:ALPHA_BAR,C`` or a number), ``seed``, ``repeats``,
    ``mc``, ``tol``, ``max-iter``. Affine maps are written
    ``affine:SCALE:SHIFT`` inside a grid.
    """
    grid: dict = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep:
            raise InvalidArgumentError(f"grid entry {part!r} is not key=value")
        if key in GRID_LIST_KEYS:
            grid[key] = _split(value)
        elif key in GRID_SCALAR_KEYS:
            grid[key] = value.strip()
        else:
            raise InvalidArgumentError(f"unknown grid key {key!r}")
    return grid


def build_grid(grid: dict) -> tuple[list[int], list[int], list[GroundTruth], list[str], ExperimentConfig]:
    def listed(key, default):
        v = grid.get(key, default)
        return v if isinstance(v, list) else [v]

    try:
        ns = [int(v) for v in listed("n", [100])]
        ds = [int(v) for v in listed("d", [2])]
        kinds = [GroundTruth.parse(str(v)) for v in listed("map", ["exp"])]
        estimators = [str(v) for v in listed("estimator", list(ESTIMATORS))]
        eps = grid.get("eps", "auto")
        base = ExperimentConfig(
            eps_rule=EpsRule.fixed(eps) if isinstance(eps, (int, float)) else EpsRule.parse(str(eps)),
            seed=int(grid.get("seed", 0)),
            repeats=int(grid.get("repeats", 1)),
            mc_samples=int(grid.get("mc", 10_000)),
            tol=float(grid.get("tol", DEFAULT_TOL)),
            max_iter=int(grid.get("max-iter", DEFAULT_MAX_ITER)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgumentError):
            raise
        raise InvalidArgumentError(f"invalid grid value: {exc}") from None
    for n in ns:
        for d in ds:
            for e in estimators:
                ExperimentConfig(d=d, n=n, estimator=e)
    return ns, ds, kinds, estimators, base


def cmd_bench(args: argparse.Namespace) -> int:
    if args.config:
        with open(args.config) as fh:
            try:
                grid = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"{args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(grid, dict):
            raise InvalidArgumentError("config file must hold a JSON object")
    else:
        grid = parse_grid(args.grid)
    ns, ds, kinds, estimators, base = build_grid(grid)
    results = compare_grid(ns, ds, kinds, estimators, base, workers=args.workers)
    out = Path(args.out)
    agg = Path(args.aggregate) if args.aggregate else out.with_suffix(".json")
    write_results(results.rows, out)
    write_aggregate(results.cells, agg)
    failed = sum(not r.ok for r in results.rows)
    print(f"{len(results.rows)} runs in {len(results.cells)} cells, {failed} failed; wrote {out} and {agg}")
    return EXIT_OK if failed == 0 else EXIT_PARTIAL


def cmd_selfcheck(args: argparse.Namespace) -> int:
    results = run_selfcheck()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_ERROR


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for partial success."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    version = f"%(prog)s {__version__}"
    parser = _Parser(prog="entmap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an entropic map between two point clouds")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("source", help="source points CSV")
    p.add_argument("target", help="target points CSV")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--eps", type=float, help="fixed regularization")
    group.add_argument("--eps-auto", metavar="ALPHA_BAR,C",
                       help="use c * n^(-1/(d'+alpha_bar+1)); default when --eps is absent is 3,1")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("map", help="evaluate a fitted map on query points")
    p.add_argument("--version", action="version", version=version)
    p.add_argument("model", help="model JSON written by 'fit'")
    p.add_argument("queries", help="query points CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("bench", help="run a synthetic benchmark grid")
    p.add_argument("--version", action="version", version=version)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--grid", help="e.g. 'n=100,400;d=2;map=exp;estimator=entropic,onenn;repeats=5'")
    src.add_argument("--config", help="JSON object with the same keys as --grid")
    p.add_argument("--out", required=True, help="per-run results CSV")
    p.add_argument("--aggregate", help="per-cell summary JSON (default: OUT with .json suffix)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selfcheck", help="run the built-in invariant checks")
    p.add_argument("--version", action="version", version=version)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EntmapError, OSError) as exc:
        _err(str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
