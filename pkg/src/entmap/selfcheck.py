"""Cross-module invariant checks on small built-in instances.

Used by ``entmap selfcheck``; every check is sized to finish in well
under a second or two.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from entmap.baseline import hungarian, w2_squared_empirical
from entmap.core import cost_matrix
from entmap.mapping import EntropicMapModel, brenier_residual, evaluate, fit
from entmap.sinkhorn import (
    dual_objective,
    marginal_violation,
    primal_objective,
    row_marginals,
    sinkhorn_solve,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _instances(seed: int = 0):
    rng = np.random.default_rng(seed)
    for n, d, eps in [(10, 1, 0.2), (30, 2, 0.1), (50, 3, 0.5), (200, 2, 0.3)]:
        yield rng.uniform(-1, 1, (n, d)), np.exp(rng.uniform(-1, 1, (n, d))), eps


def check_duality_gap() -> tuple[bool, str]:
    worst = 0.0
    for X, Y, eps in _instances():
        pot, _ = sinkhorn_solve(X, Y, eps, tol=1e-8)
        dual = dual_objective(pot, X, Y)
        gap = abs(primal_objective(pot, X, Y) - dual) / (1 + abs(dual))
        worst = max(worst, gap)
    return worst <= 1e-6, f"max relative gap {worst:.2e}"


def check_marginals() -> tuple[bool, str]:
    worst_col = worst_row = 0.0
    for X, Y, eps in _instances():
        pot, report = sinkhorn_solve(X, Y, eps, tol=1e-8)
        worst_col = max(worst_col, marginal_violation(pot, X, Y))
        worst_row = max(worst_row, float(np.max(np.abs(row_marginals(pot, X, Y) - 1))))
    return worst_col <= 1e-8 and worst_row <= 1e-12, f"column TV {worst_col:.2e}, row error {worst_row:.2e}"


def check_dual_monotone() -> tuple[bool, str]:
    worst = 0.0
    for X, Y, eps in _instances():
        _, report = sinkhorn_solve(X, Y, eps, tol=1e-8)
        steps = np.diff(report.dual_trace)
        worst = min(worst, float(steps.min()) if steps.size else 0.0)
    return worst >= -1e-9, f"largest decrease {-worst:.2e}"


def check_brenier() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        Y = rng.normal(size=(20, 2))
        model = EntropicMapModel(Y, rng.normal(scale=0.3, size=20), 0.5)
        for x in rng.uniform(-1.5, 1.5, (10, 2)):
            worst = max(worst, brenier_residual(model, x))
    return worst <= 1e-6, f"max residual {worst:.2e}"


def check_hungarian_brute_force() -> tuple[bool, str]:
    rng = np.random.default_rng(2)
    perms = np.array(list(itertools.permutations(range(6))))
    rows = np.arange(6)
    bad = 0
    for _ in range(20):
        C = rng.uniform(size=(6, 6))
        best = C[rows, perms].sum(axis=1).min()
        if C[rows, hungarian(C).sigma].sum() != best:
            bad += 1
    return bad == 0, f"{bad}/20 mismatches against enumeration"


def check_hungarian_1d() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        x, y = rng.normal(size=(2, 40, 1))
        sorted_cost = float(np.mean((np.sort(x[:, 0]) - np.sort(y[:, 0])) ** 2))
        worst = max(worst, abs(w2_squared_empirical(x, y) - sorted_cost) / sorted_cost)
    return worst <= 1e-12, f"max relative error {worst:.2e}"


def check_entropic_lower_bound() -> tuple[bool, str]:
    margin = np.inf
    for X, Y, eps in _instances():
        pot, _ = sinkhorn_solve(X, Y, eps, tol=1e-8)
        margin = min(margin, primal_objective(pot, X, Y) - 0.5 * w2_squared_empirical(X, Y))
    return margin >= 0, f"min S_eps - W2^2/2 = {margin:.3e}"


def check_degenerate_limits() -> tuple[bool, str]:
    rng = np.random.default_rng(4)
    Y = rng.normal(size=(15, 3))
    model = EntropicMapModel(Y, rng.normal(size=15), 1e9)
    err_mean = float(np.abs(evaluate(model, rng.normal(size=3)) - Y.mean(axis=0)).max())
    X = rng.uniform(-1, 1, (12, 2))
    C = cost_matrix(X, X)
    eps = C[~np.eye(12, dtype=bool)].min() / 25
    ident, _ = fit(X, X, eps, tol=1e-10)
    err_id = max(float(np.abs(evaluate(ident, x) - x).max()) for x in X)
    ok = err_mean <= 1e-6 and err_id <= 1e-3
    return ok, f"large-eps error {err_mean:.1e}, identity error {err_id:.1e}"


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("duality gap", check_duality_gap),
    ("marginal feasibility", check_marginals),
    ("dual monotonicity", check_dual_monotone),
    ("brenier identity", check_brenier),
    ("hungarian vs brute force", check_hungarian_brute_force),
    ("hungarian 1-d vs sorting", check_hungarian_1d),
    ("entropic lower bound", check_entropic_lower_bound),
    ("degenerate limits", check_degenerate_limits),
]


def run_selfcheck() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed run
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results
