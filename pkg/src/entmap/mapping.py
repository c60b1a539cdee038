"""Entropic map: barycentric projection of the entropic plan, defined everywhere.

For a query ``x`` the map returns the softmax-weighted mean of the targets

    T(x) = sum_j w_j(x) Y_j,   w_j(x) ∝ exp((g_j - 0.5 * ||x - Y_j||^2) / eps)

which only needs the targets, their potentials ``g`` and ``eps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from entmap.core import (
    DEFAULT_MAX_ENTRIES,
    ArrayLike,
    PointCloud,
    as_point,
    as_points,
    atomic_write_text,
    lse,
    pairwise_half_sq,
)
from entmap.errors import InvalidArgumentError, NumericalFailureError, ParseError
from entmap.sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, SolveReport, sinkhorn_solve

# queries x targets x d entries per evaluation block
EVAL_BLOCK_ENTRIES = 2**22
FD_RELATIVE_STEP = 1e-5


@dataclass(frozen=True)
class EntropicMapModel:
    """Everything needed to evaluate the entropic map at arbitrary points.

    The model does not care whether ``gvals`` come from a converged solve
    or from a truncated run; any finite values give a valid map.
    """

    targets: PointCloud
    gvals: np.ndarray
    eps: float

    def __post_init__(self):
        targets = self.targets if isinstance(self.targets, PointCloud) else PointCloud(self.targets)
        g = np.array(self.gvals, dtype=np.float64).ravel()
        if g.shape[0] != targets.n:
            raise InvalidArgumentError(f"{g.shape[0]} potentials for {targets.n} targets")
        if not np.all(np.isfinite(g)):
            raise InvalidArgumentError("target potentials must be finite")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise InvalidArgumentError(f"eps must be positive and finite, got {self.eps}")
        g.setflags(write=False)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "gvals", g)
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def d(self) -> int:
        return self.targets.d

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "d": self.d,
            "targets": self.targets.points.tolist(),
            "g": self.gvals.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EntropicMapModel":
        try:
            eps, d, targets, g = obj["eps"], obj["d"], obj["targets"], obj["g"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"model is missing field {exc}") from None
        pts = np.array(targets, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise ParseError(f"targets do not have declared dimension {d}")
        return cls(PointCloud(pts), np.array(g, dtype=np.float64), float(eps))

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EntropicMapModel":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
        return cls.from_dict(obj)


def fit(
    X: ArrayLike,
    Y: ArrayLike,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    max_entries: int = DEFAULT_MAX_ENTRIES,
) -> tuple[EntropicMapModel, SolveReport]:
    """Run Sinkhorn between ``X`` and ``Y`` and package the target side."""
    Y = Y if isinstance(Y, PointCloud) else PointCloud(Y)
    pot, report = sinkhorn_solve(X, Y, eps, tol=tol, max_iter=max_iter, max_entries=max_entries)
    return EntropicMapModel(Y, pot.g, eps), report


def _logits(model: EntropicMapModel, Q: np.ndarray) -> np.ndarray:
    logits = (model.gvals[None, :] - pairwise_half_sq(Q, model.targets.points)) / model.eps
    if not np.all(np.isfinite(logits)):
        raise NumericalFailureError("non-finite logits in map evaluation")
    return logits


def softmax_weights(model: EntropicMapModel, Xq: ArrayLike) -> np.ndarray:
    """Normalized target weights ``w_j(x)`` for each query row."""
    Q = as_points(Xq)
    _check_dim(model, Q.shape[1])
    logits = _logits(model, Q)
    return np.exp(logits - lse(logits, axis=1)[:, None])


def _check_dim(model: EntropicMapModel, d: int) -> None:
    if d != model.d:
        raise InvalidArgumentError(f"dimension mismatch: model has d={model.d}, query has d={d}")


def eval_batch(model: EntropicMapModel, Xq: ArrayLike) -> np.ndarray:
    """Evaluate the map at every row of ``Xq``; returns an array of the same shape.

    Each output row is computed by the same reduction regardless of how
    many queries are in the batch, so batching never changes the bits.
    """
    Q = np.asarray(Xq, dtype=np.float64) if not isinstance(Xq, PointCloud) else Xq.points
    if Q.ndim == 2 and Q.shape[0] == 0:
        _check_dim(model, Q.shape[1])
        return np.zeros((0, model.d))
    Q = as_points(Q)
    _check_dim(model, Q.shape[1])
    Yt = model.targets.points.T  # (d, m)
    m, d = model.targets.n, model.d
    out = np.empty((Q.shape[0], d))
    rows = max(1, EVAL_BLOCK_ENTRIES // (m * (d + 1)))
    for start in range(0, Q.shape[0], rows):
        sl = slice(start, min(start + rows, Q.shape[0]))
        logits = _logits(model, Q[sl])
        w = np.exp(logits - lse(logits, axis=1)[:, None])
        # contiguous last-axis reduction: same summation order for every row
        out[sl] = np.sum(w[:, None, :] * Yt[None, :, :], axis=-1)
    return out


def evaluate(model: EntropicMapModel, x) -> np.ndarray:
    """Evaluate the map at a single point."""
    x = as_point(x, model.d)
    return eval_batch(model, x[None, :])[0]


def f_potential(model: EntropicMapModel, x) -> float:
    """Out-of-sample source potential ``-eps * log mean_j exp((g_j - C(x, Y_j))/eps)``."""
    x = as_point(x, model.d)
    logits = _logits(model, x[None, :])[0]
    return float(-model.eps * (lse(logits) - math.log(model.targets.n)))


def fd_gradient(model: EntropicMapModel, x, h: float | None = None) -> np.ndarray:
    """Central finite-difference gradient of :func:`f_potential` at ``x``."""
    x = as_point(x, model.d)
    if h is None:
        h = FD_RELATIVE_STEP * (1.0 + float(np.linalg.norm(x)))
    if not h > 0:
        raise InvalidArgumentError(f"step h must be positive, got {h}")
    grad = np.empty(model.d)
    for k in range(model.d):
        e = np.zeros(model.d)
        e[k] = h
        grad[k] = (f_potential(model, x + e) - f_potential(model, x - e)) / (2.0 * h)
    return grad


def brenier_residual(model: EntropicMapModel, x, h: float | None = None) -> float:
    """``||T(x) - (x - grad f(x))||`` with a finite-difference gradient.

    ``h`` defaults to ``1e-5 * (1 + ||x||)``.
    """
    x = as_point(x, model.d)
    grad = fd_gradient(model, x, h)
    return float(np.linalg.norm(evaluate(model, x) - (x - grad)))
