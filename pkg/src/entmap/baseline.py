"""Exact empirical OT by linear assignment, and the 1-nearest-neighbor map.

For two uniform clouds of equal size the optimal coupling can be taken to
be a permutation, found here with an O(n^3) shortest augmenting path
method with dual potentials (Kuhn-Munkres in its Jonker-Volgenant form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from entmap.core import ArrayLike, PointCloud, as_point, as_points, cost_matrix, pairwise_half_sq
from entmap.errors import InvalidArgumentError

NN_BLOCK_ENTRIES = 2**22


@numba.njit(cache=True, nogil=True)
def _lsap(C):
    # 1-based arrays; column 0 is a virtual column holding the row being inserted
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            j1_free = False
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    # among equal reduced costs prefer an unmatched column
                    if minv[j] < delta or (minv[j] == delta and not j1_free and p[j] == 0):
                        delta = minv[j]
                        j1 = j
                        j1_free = p[j] == 0
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    sigma = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        sigma[p[j] - 1] = j - 1
    return sigma


@dataclass(frozen=True)
class Assignment:
    """A permutation coupling.

    Attributes:
        sigma: ``sigma[i]`` is the column matched to row ``i``.
        cost: mean matched cost ``(1/n) sum_i C[i, sigma[i]]``.
    """

    sigma: np.ndarray
    cost: float


def hungarian(C) -> Assignment:
    """Minimum-cost perfect matching for a square cost matrix.

    Raises:
        InvalidArgumentError: if ``C`` is not square or has non-finite entries.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise InvalidArgumentError(f"cost matrix must be square and nonempty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidArgumentError("cost matrix has non-finite entries")
    sigma = _lsap(C)
    sigma.setflags(write=False)
    cost = float(np.mean(C[np.arange(C.shape[0]), sigma]))
    return Assignment(sigma, cost)


def _check_pair(X: ArrayLike, Y: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    A, B = as_points(X), as_points(Y)
    if A.shape != B.shape:
        raise InvalidArgumentError(f"clouds must have equal shapes, got {A.shape} and {B.shape}")
    return A, B


def w2_squared_empirical(X: ArrayLike, Y: ArrayLike) -> float:
    """Squared 2-Wasserstein distance between two equal-size uniform clouds."""
    A, B = _check_pair(X, Y)
    return 2.0 * hungarian(cost_matrix(A, B)).cost


@dataclass(frozen=True)
class OneNNModel:
    """Send a query to the match of its nearest source point."""

    sources: PointCloud
    targets: PointCloud
    sigma: np.ndarray

    @property
    def d(self) -> int:
        return self.sources.d

    def __call__(self, x) -> np.ndarray:
        return one_nn_eval(self, x)


def one_nn_fit(X: ArrayLike, Y: ArrayLike) -> OneNNModel:
    A, B = _check_pair(X, Y)
    assignment = hungarian(cost_matrix(A, B))
    return OneNNModel(PointCloud(A), PointCloud(B), assignment.sigma)


def nearest_index(sources: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Index of the nearest source for each query row; ties go to the lowest index."""
    out = np.empty(Q.shape[0], dtype=np.int64)
    rows = max(1, NN_BLOCK_ENTRIES // sources.shape[0])
    for start in range(0, Q.shape[0], rows):
        sl = slice(start, min(start + rows, Q.shape[0]))
        out[sl] = np.argmin(pairwise_half_sq(Q[sl], sources), axis=1)
    return out


def one_nn_eval_batch(model: OneNNModel, Xq: ArrayLike) -> np.ndarray:
    Q = as_points(Xq)
    if Q.shape[1] != model.d:
        raise InvalidArgumentError(f"dimension mismatch: model has d={model.d}, query has d={Q.shape[1]}")
    idx = nearest_index(model.sources.points, Q)
    return model.targets.points[model.sigma[idx]]


def one_nn_eval(model: OneNNModel, x) -> np.ndarray:
    x = as_point(x, model.d)
    return one_nn_eval_batch(model, x[None, :])[0]
