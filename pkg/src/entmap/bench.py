"""Synthetic map-estimation experiments on the uniform cube.

Source samples are uniform on ``[-1, 1]^d``; target samples are a fresh
uniform draw pushed through a coordinate-wise monotone map. Estimators
are scored by Monte-Carlo MSE against the true map on held-out points.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from entmap.baseline import one_nn_eval_batch, one_nn_fit
from entmap.core import PointCloud, as_points, atomic_write_text, format_float
from entmap.errors import EntmapError, InvalidArgumentError
from entmap.mapping import eval_batch, fit
from entmap.sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL

Seed = Union[int, Sequence[int]]

MAP_KINDS = ("exp", "cubic", "identity", "affine")
ESTIMATORS = ("entropic", "onenn")
RESULT_COLUMNS = ("estimator", "d", "n", "eps", "repeat", "mse", "runtime_ms", "iters", "seed", "status")


@dataclass(frozen=True)
class GroundTruth:
    """A coordinate-wise monotone map, i.e. the gradient of a separable convex potential.

    ``kind`` is one of ``exp`` (``e^x``), ``cubic`` (``3 x^2 sign(x)``),
    ``identity`` or ``affine`` (``scale * x + shift`` with ``scale > 0``).
    """

    kind: str = "exp"
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise InvalidArgumentError(f"unknown map kind {self.kind!r}; expected one of {MAP_KINDS}")
        if self.kind == "affine" and not self.scale > 0:
            raise InvalidArgumentError("affine map needs scale > 0 to be monotone")

    @classmethod
    def parse(cls, text: str) -> "GroundTruth":
        """Parse ``exp``, ``cubic``, ``identity`` or ``affine:SCALE:SHIFT``.

        ``affine:SCALE,SHIFT`` is accepted as well.
        """
        kind, _, args = text.strip().partition(":")
        if kind == "affine" and args:
            try:
                scale, shift = (float(v) for v in args.replace(",", ":").split(":"))
            except ValueError:
                raise InvalidArgumentError(f"bad affine map {text!r}; use affine:SCALE:SHIFT") from None
            return cls("affine", scale, shift)
        if args:
            raise InvalidArgumentError(f"map kind {kind!r} takes no parameters")
        return cls(kind)

    @property
    def label(self) -> str:
        if self.kind == "affine":
            return f"affine:{format_float(self.scale)}:{format_float(self.shift)}"
        return self.kind

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "cubic":
            return 3.0 * x**2 * np.sign(x)
        if self.kind == "identity":
            return x.copy()
        return self.scale * x + self.shift


def ground_truth_map(kind: Union[str, GroundTruth], x) -> np.ndarray:
    """Apply the named coordinate-wise map to a point (or rows of points)."""
    gt = kind if isinstance(kind, GroundTruth) else GroundTruth.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("input must be finite")
    return gt(x)


def make_target(X, kind: Union[str, GroundTruth]) -> PointCloud:
    return PointCloud(ground_truth_map(kind, as_points(X)))


def sample_uniform_cube(n: int, d: int, seed: Seed) -> PointCloud:
    """``n`` i.i.d. uniform points on ``[-1, 1]^d``, reproducible from ``seed``."""
    if n < 1 or d < 1:
        raise InvalidArgumentError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(-1.0, 1.0, size=(n, d)))


def d_prime(d: int) -> int:
    """Even dimension ``2 * ceil(d / 2)`` entering the regularization schedule."""
    return 2 * math.ceil(d / 2)


def epsilon_rule(n: int, d: int, alpha_bar: float = 3.0, c: float = 1.0) -> float:
    """Regularization ``c * n^(-1 / (d' + alpha_bar + 1))`` with ``d' = 2 ceil(d/2)``."""
    if not 1.0 < alpha_bar <= 3.0:
        raise InvalidArgumentError(f"alpha_bar must lie in (1, 3], got {alpha_bar}")
    if not c > 0:
        raise InvalidArgumentError(f"c must be positive, got {c}")
    if n < 2 or d < 1:
        raise InvalidArgumentError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    return c * n ** (-1.0 / (d_prime(d) + alpha_bar + 1.0))


@dataclass(frozen=True)
class EpsRule:
    """Either the automatic ``c * n^(-1/(d'+alpha_bar+1))`` schedule or a fixed value."""

    auto: bool = True
    alpha_bar: float = 3.0
    c: float = 1.0
    value: float | None = None

    def __post_init__(self):
        if self.auto:
            if not (1.0 < self.alpha_bar <= 3.0 and self.c > 0):
                raise InvalidArgumentError("auto rule needs alpha_bar in (1, 3] and c > 0")
        elif self.value is None or not (self.value > 0 and math.isfinite(self.value)):
            raise InvalidArgumentError(f"fixed eps must be positive, got {self.value}")

    @classmethod
    def fixed(cls, value: float) -> "EpsRule":
        return cls(auto=False, value=float(value))

    @classmethod
    def parse(cls, text: str) -> "EpsRule":
        """Parse ``auto``, ``auto:ALPHA_BAR,C`` or a plain number."""
        text = text.strip()
        if text == "auto":
            return cls()
        if text.startswith("auto:"):
            try:
                alpha_bar, c = (float(v) for v in text[5:].split(","))
            except ValueError:
                raise InvalidArgumentError(f"bad eps rule {text!r}; use auto:ALPHA_BAR,C") from None
            return cls(True, alpha_bar, c)
        try:
            return cls.fixed(float(text))
        except ValueError:
            raise InvalidArgumentError(f"bad eps rule {text!r}") from None

    def resolve(self, n: int, d: int) -> float:
        if self.auto:
            return epsilon_rule(n, d, self.alpha_bar, self.c)
        return float(self.value)


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 2
    n: int = 100
    map_kind: GroundTruth = field(default_factory=GroundTruth)
    estimator: str = "entropic"
    eps_rule: EpsRule = field(default_factory=EpsRule)
    seed: int = 0
    mc_samples: int = 10_000
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    repeats: int = 1

    def __post_init__(self):
        if isinstance(self.map_kind, str):
            object.__setattr__(self, "map_kind", GroundTruth.parse(self.map_kind))
        if self.n < 2 or self.d < 1:
            raise InvalidArgumentError(f"need n >= 2 and d >= 1, got n={self.n}, d={self.d}")
        if self.mc_samples < 1 or self.repeats < 1:
            raise InvalidArgumentError("mc_samples and repeats must be >= 1")
        if self.estimator not in ESTIMATORS:
            raise InvalidArgumentError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ExperimentResult:
    estimator: str
    n: int
    d: int
    eps: float
    repeat: int
    mse: float
    runtime_ms: float
    iters: int
    seed: int
    status: str = "ok"
    map_kind: str = "exp"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


BatchMap = Callable[[np.ndarray], np.ndarray]


def mse_monte_carlo(estimate: BatchMap, truth: BatchMap, d: int, m: int, seed: Seed) -> float:
    """Monte-Carlo estimate of ``E ||estimate(x) - truth(x)||^2`` for ``x ~ Unif[-1, 1]^d``.

    Both callables receive the ``(m, d)`` array of integration points and
    must return an array of the same shape.
    """
    if m < 1:
        raise InvalidArgumentError(f"need m >= 1 integration points, got {m}")
    pts = sample_uniform_cube(m, d, seed).points
    diff = np.asarray(estimate(pts)) - np.asarray(truth(pts))
    return float(np.mean(np.sum(diff**2, axis=1)))


def _run_repeat(cfg: ExperimentConfig, r: int) -> ExperimentResult:
    sub = cfg.seed ^ r
    eps = cfg.eps_rule.resolve(cfg.n, cfg.d) if cfg.estimator == "entropic" else 0.0
    base = dict(estimator=cfg.estimator, n=cfg.n, d=cfg.d, eps=eps, repeat=r, seed=sub,
                map_kind=cfg.map_kind.label)
    X = sample_uniform_cube(cfg.n, cfg.d, (sub, 0))
    Y = make_target(sample_uniform_cube(cfg.n, cfg.d, (sub, 1)), cfg.map_kind)
    try:
        t0 = time.perf_counter()
        if cfg.estimator == "entropic":
            model, report = fit(X, Y, eps, tol=cfg.tol, max_iter=cfg.max_iter)
            elapsed = time.perf_counter() - t0
            iters = report.iterations
            est = lambda Q: eval_batch(model, Q)  # noqa: E731
        else:
            model = one_nn_fit(X, Y)
            elapsed = time.perf_counter() - t0
            iters = 0
            est = lambda Q: one_nn_eval_batch(model, Q)  # noqa: E731
        mse = mse_monte_carlo(est, cfg.map_kind, cfg.d, cfg.mc_samples, (sub, 2))
    except (EntmapError, FloatingPointError) as exc:
        return ExperimentResult(**base, mse=math.nan, runtime_ms=math.nan, iters=0,
                                status=f"failed: {type(exc).__name__}: {exc}")
    return ExperimentResult(**base, mse=mse, runtime_ms=1e3 * elapsed, iters=iters)


def run_experiment(config: ExperimentConfig) -> list[ExperimentResult]:
    """Run ``config.repeats`` independent replicates of one experiment cell.

    Repeat ``r`` uses the sub-seed ``seed ^ r``, from which the source
    sample, the target sample and the integration points each get their
    own stream. Only the fit is timed. A solver failure yields a row with
    a ``failed`` status instead of raising.
    """
    return [_run_repeat(config, r) for r in range(config.repeats)]


def _std(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def aggregate(results: Sequence[ExperimentResult]) -> dict:
    """Mean and standard deviation of MSE and runtime over the successful repeats."""
    first = results[0]
    ok = [r for r in results if r.ok]
    mse = np.array([r.mse for r in ok])
    rt = np.array([r.runtime_ms for r in ok])
    nan = math.nan
    return {
        "estimator": first.estimator,
        "map_kind": first.map_kind,
        "d": first.d,
        "n": first.n,
        "eps": first.eps,
        "repeats": len(results),
        "failures": len(results) - len(ok),
        "mean_mse": float(mse.mean()) if ok else nan,
        "std_mse": _std(mse) if ok else nan,
        "mean_runtime_ms": float(rt.mean()) if ok else nan,
        "std_runtime_ms": _std(rt) if ok else nan,
    }


@dataclass
class GridResults:
    rows: list[ExperimentResult]
    cells: list[dict]

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.rows)


def compare_grid(
    ns: Iterable[int],
    ds: Iterable[int],
    kinds: Iterable[Union[str, GroundTruth]],
    estimators: Iterable[str],
    base_config: ExperimentConfig,
    workers: int = 1,
) -> GridResults:
    """Sweep the Cartesian product of the axes, reusing ``base_config`` for the rest.

    Cells run concurrently on up to ``workers`` threads. The output does
    not depend on the worker count: rows are sorted by
    (estimator, d, n, map kind, repeat) and cells in the same order.
    """
    kinds = [k if isinstance(k, GroundTruth) else GroundTruth.parse(k) for k in kinds]
    kind_rank = {k.label: i for i, k in enumerate(kinds)}
    configs = [
        replace(base_config, n=n, d=d, map_kind=k, estimator=e)
        for e in estimators
        for d in ds
        for n in ns
        for k in kinds
    ]
    if workers < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers}")
    if workers == 1:
        per_cell = [run_experiment(c) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_cell = list(pool.map(run_experiment, configs))

    def key(r: ExperimentResult):
        return (r.estimator, r.d, r.n, kind_rank[r.map_kind])

    per_cell.sort(key=lambda cell: key(cell[0]))
    rows = sorted((r for cell in per_cell for r in cell), key=lambda r: key(r) + (r.repeat,))
    cells = [aggregate(cell) for cell in per_cell]
    return GridResults(rows, cells)


def results_to_csv_text(rows: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in rows:
        writer.writerow([
            r.estimator, r.d, r.n, format_float(r.eps), r.repeat, format_float(r.mse),
            format_float(r.runtime_ms), r.iters, r.seed, r.status,
        ])
    return buf.getvalue()


def _json_safe(obj: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in obj.items()}


def write_results(rows: Sequence[ExperimentResult], path) -> None:
    atomic_write_text(path, results_to_csv_text(rows))


def write_aggregate(cells: Sequence[dict], path) -> None:
    atomic_write_text(path, json.dumps([_json_safe(c) for c in cells], indent=1) + "\n")
