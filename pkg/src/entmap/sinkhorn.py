"""Log-domain Sinkhorn iterations between two uniform empirical measures.

The solver alternates the two block maximizations of the entropic dual

    g_j = -eps * log (1/n) sum_i exp((f_i - C_ij) / eps)
    f_i = -eps * log (1/m) sum_j exp((g_j - C_ij) / eps)

starting from ``f = 0`` and always finishing on an ``f`` update, so the
row (source) marginal of the returned plan is exact up to round-off and
the column (target) marginal is what the stopping rule monitors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from entmap.core import (
    DEFAULT_MAX_ENTRIES,
    ArrayLike,
    as_points,
    cost_row_blocks,
    lse,
    pairwise_half_sq,
)
from entmap.errors import InvalidArgumentError, InvalidStateError, NumericalFailureError

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
# abort once a potential exceeds this multiple of (1 + max cost)
DIVERGENCE_FACTOR = 1e6
# block size used when the full cost matrix is over the cap
STREAM_BLOCK_ENTRIES = 2**22
# row-block size for the reductions, small enough to keep temporaries in cache
REDUCE_BLOCK_ENTRIES = 2**15
PRIMAL_MAX_VIOLATION = 1e-3


@dataclass(frozen=True)
class DualPotentials:
    """Entropic dual potentials on the two supports.

    Attributes:
        f: values at the source points, shape ``(n,)``.
        g: values at the target points, shape ``(m,)``.
        eps: regularization strength.
    """

    f: np.ndarray
    g: np.ndarray
    eps: float

    def __post_init__(self):
        f = np.array(self.f, dtype=np.float64).ravel()
        g = np.array(self.g, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise InvalidArgumentError("potentials must be finite")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise InvalidArgumentError(f"eps must be positive and finite, got {self.eps}")
        f.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "eps", float(self.eps))


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    marginal_violation: float
    dual_trace: np.ndarray = field(repr=False)
    converged: bool


def _lse_finite(a: np.ndarray, axis: int) -> np.ndarray:
    # lean LSE for the solver loop; a non-finite max propagates as NaN and is
    # rejected by the divergence check
    m = a.max(axis=axis)
    shifted = a - (m[:, None] if axis == 1 else m)
    return np.log(np.exp(shifted, out=shifted).sum(axis=axis)) + m


class _Cost:
    """Cost matrix access that is either materialized or streamed by row blocks."""

    def __init__(self, A: np.ndarray, B: np.ndarray, max_entries: int = DEFAULT_MAX_ENTRIES):
        if A.shape[1] != B.shape[1]:
            raise InvalidArgumentError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
        self.A, self.B = A, B
        self.n, self.m = A.shape[0], B.shape[0]
        self.full = pairwise_half_sq(A, B) if self.n * self.m <= max_entries else None
        self.max_cost = max(float(C.max()) for _, C in self.blocks())
        self._scaled = (None, None)

    def scaled_blocks(self, eps: float):
        """Row blocks of ``C / eps``; views into a cached copy when materialized."""
        if self.full is None:
            for sl, C in self.blocks():
                yield sl, C / eps
            return
        if self._scaled[0] != eps:
            self._scaled = (eps, self.full / eps)
        Cs = self._scaled[1]
        step = max(1, REDUCE_BLOCK_ENTRIES // self.m)
        for start in range(0, self.n, step):
            sl = slice(start, min(start + step, self.n))
            yield sl, Cs[sl]

    def blocks(self):
        if self.full is not None:
            yield slice(0, self.n), self.full
        else:
            yield from cost_row_blocks(self.A, self.B, STREAM_BLOCK_ENTRIES)

    def row_lse(self, g: np.ndarray, eps: float) -> np.ndarray:
        """``LSE_j((g_j - C_ij) / eps)`` for every row ``i``."""
        ge = g / eps
        out = np.empty(self.n)
        for sl, Cs in self.scaled_blocks(eps):
            out[sl] = _lse_finite(ge - Cs, 1)
        return out

    def col_lse(self, f: np.ndarray, eps: float) -> np.ndarray:
        """``LSE_i((f_i - C_ij) / eps)`` for every column ``j``."""
        fe = f / eps
        acc = None
        for sl, Cs in self.scaled_blocks(eps):
            part = _lse_finite(fe[sl, None] - Cs, 0)
            acc = part if acc is None else np.logaddexp(acc, part)
        return acc

    def weighted_sums(self, f: np.ndarray, g: np.ndarray, eps: float) -> tuple[float, float]:
        """Return ``(sum pi_ij C_ij, sum pi_ij log pi~_ij)`` for ``pi = pi~ / (n m)``."""
        cost_term = 0.0
        ent_term = 0.0
        nm = self.n * self.m
        for sl, C in self.blocks():
            logd = (f[sl, None] + g[None, :] - C) / eps
            pi = np.exp(logd) / nm
            cost_term += float(np.sum(pi * C))
            ent_term += float(np.sum(pi * logd))
        return cost_term, ent_term


def _check_pot(pot: DualPotentials, A: np.ndarray, B: np.ndarray) -> None:
    if pot.f.shape[0] != A.shape[0] or pot.g.shape[0] != B.shape[0]:
        raise InvalidArgumentError(
            f"potential lengths ({pot.f.shape[0]}, {pot.g.shape[0]}) do not match "
            f"cloud sizes ({A.shape[0]}, {B.shape[0]})"
        )


def sinkhorn_solve(
    X: ArrayLike,
    Y: ArrayLike,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    max_entries: int = DEFAULT_MAX_ENTRIES,
) -> tuple[DualPotentials, SolveReport]:
    """Solve the entropic dual between the uniform measures on ``X`` and ``Y``.

    One iteration is a ``g`` update followed by an ``f`` update. The run
    stops once the total-variation distance between the plan's column
    marginal and the uniform weights is at most ``tol``, or after
    ``max_iter`` iterations. The returned potentials are shifted so that
    ``mean(f) == 0``; the plan is unaffected by this shift.

    Args:
        X: source points, ``(n, d)``.
        Y: target points, ``(m, d)``.
        eps: regularization strength.
        tol: stopping threshold on the column-marginal TV distance.
        max_iter: iteration cap.
        max_entries: largest cost matrix to materialize; above it rows
            are recomputed on the fly every sweep.

    Returns:
        The potentials and a :class:`SolveReport`.

    Raises:
        InvalidArgumentError: on bad ``eps``/``tol``/``max_iter`` or shapes.
        NumericalFailureError: if a potential becomes non-finite or blows up.
    """
    if not (eps > 0 and math.isfinite(eps)):
        raise InvalidArgumentError(f"eps must be positive and finite, got {eps}")
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    if int(max_iter) < 1:
        raise InvalidArgumentError(f"max_iter must be >= 1, got {max_iter}")
    A, B = as_points(X), as_points(Y)
    cost = _Cost(A, B, max_entries)
    log_n, log_m = math.log(cost.n), math.log(cost.m)
    bound = DIVERGENCE_FACTOR * (1.0 + cost.max_cost)

    def check(v: np.ndarray, k: int) -> np.ndarray:
        # the negated comparison also rejects NaN
        if not np.abs(v).max() <= bound:
            raise NumericalFailureError("Sinkhorn potentials diverged", iteration=k)
        return v

    # overflow is caught by check() and reported with its iteration
    with np.errstate(over="ignore", invalid="ignore"):
        f = np.zeros(cost.n)
        g = check(-eps * (cost.col_lse(f, eps) - log_n), 0)
        trace = []
        viol = math.inf
        converged = False
        k = 0
        while k < max_iter:
            k += 1
            f = check(-eps * (cost.row_lse(g, eps) - log_m), k)
            # rows are normalized, so the exp term of the dual equals eps exactly
            trace.append(float(f.sum() / cost.n + g.sum() / cost.m))
            g_next = check(-eps * (cost.col_lse(f, eps) - log_n), k)
            # column marginal of the (f, g) plan, read off the next g update
            col = np.exp((g - g_next) / eps)
            viol = 0.5 * float(np.abs(col - 1.0).sum()) / cost.m
            if viol <= tol:
                converged = True
                break
            if k < max_iter:
                g = g_next

    shift = float(np.mean(f))
    pot = DualPotentials(f - shift, g + shift, eps)
    report = SolveReport(
        iterations=k,
        marginal_violation=viol,
        dual_trace=np.array(trace),
        converged=converged,
    )
    return pot, report


def plan_density(pot: DualPotentials, i: int, j: int, C_ij: float) -> float:
    """Density ``exp((f_i + g_j - C_ij) / eps)`` of the plan w.r.t. the product measure."""
    if not (0 <= i < pot.f.shape[0] and 0 <= j < pot.g.shape[0]):
        raise IndexError(f"index ({i}, {j}) out of range for ({pot.f.shape[0]}, {pot.g.shape[0]})")
    return math.exp((pot.f[i] + pot.g[j] - C_ij) / pot.eps)


def plan_matrix(pot: DualPotentials, X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """Full ``n x m`` matrix of plan densities."""
    A, B = as_points(X), as_points(Y)
    _check_pot(pot, A, B)
    C = pairwise_half_sq(A, B)
    return np.exp((pot.f[:, None] + pot.g[None, :] - C) / pot.eps)


def row_marginals(pot: DualPotentials, X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """``(1/m) sum_j pi~_ij`` for each source point (1 at optimality)."""
    A, B = as_points(X), as_points(Y)
    _check_pot(pot, A, B)
    cost = _Cost(A, B)
    return np.exp(cost.row_lse(pot.g, pot.eps) + pot.f / pot.eps - math.log(cost.m))


def col_marginals(pot: DualPotentials, X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """``(1/n) sum_i pi~_ij`` for each target point (1 at optimality)."""
    A, B = as_points(X), as_points(Y)
    _check_pot(pot, A, B)
    cost = _Cost(A, B)
    return np.exp(cost.col_lse(pot.f, pot.eps) + pot.g / pot.eps - math.log(cost.n))


def marginal_violation(pot: DualPotentials, X: ArrayLike, Y: ArrayLike) -> float:
    """TV distance between the plan's column marginal and the uniform weights."""
    return 0.5 * float(np.mean(np.abs(col_marginals(pot, X, Y) - 1.0)))


def dual_objective(pot: DualPotentials, X: ArrayLike, Y: ArrayLike) -> float:
    """Entropic dual value under uniform weights.

    ``mean(f) + mean(g) - eps * mean_ij exp((f_i + g_j - C_ij)/eps) + eps``
    """
    A, B = as_points(X), as_points(Y)
    _check_pot(pot, A, B)
    cost = _Cost(A, B)
    eps = pot.eps
    log_mass = lse(cost.row_lse(pot.g, eps) + pot.f / eps) - math.log(cost.n * cost.m)
    return float(np.mean(pot.f) + np.mean(pot.g) - eps * math.exp(log_mass) + eps)


def primal_objective(pot: DualPotentials, X: ArrayLike, Y: ArrayLike) -> float:
    """Transport cost plus ``eps * KL(pi || P_n x Q_n)`` of the plan built from ``pot``.

    Raises:
        InvalidStateError: if the plan is too far from a coupling
            (column-marginal violation above 1e-3) for the KL term to
            be meaningful.
    """
    A, B = as_points(X), as_points(Y)
    _check_pot(pot, A, B)
    viol = marginal_violation(pot, A, B)
    if viol > PRIMAL_MAX_VIOLATION:
        raise InvalidStateError(
            f"marginal violation {viol:.3g} exceeds {PRIMAL_MAX_VIOLATION}; plan is not a coupling"
        )
    cost_term, ent_term = _Cost(A, B).weighted_sums(pot.f, pot.g, pot.eps)
    return cost_term + pot.eps * ent_term
