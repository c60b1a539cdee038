"""Geometry primitives and stable reductions shared by the solvers.

Everything here works in float64. The cost is always the half squared
Euclidean distance ``0.5 * ||x - y||^2``.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

import numpy as np
from scipy.spatial.distance import cdist

from entmap.errors import InvalidArgumentError, ParseError, ResourceError

DEFAULT_MAX_ENTRIES = 10**8

ArrayLike = Union[np.ndarray, "PointCloud", list, tuple]


@dataclass(frozen=True)
class PointCloud:
    """``n`` points in ``R^d``; the support of a uniform empirical measure.

    The coordinate array is copied to float64 and made read-only, so a
    cloud can be shared freely between threads.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise InvalidArgumentError(f"points must be a 2-d array, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidArgumentError(f"need n >= 1 and d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def translate(self, shift) -> "PointCloud":
        return PointCloud(self.points + np.asarray(shift, dtype=np.float64))

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "PointCloud":
        pts = read_points_csv(path)
        if pts.shape[0] == 0:
            raise ParseError(f"{path}: no data rows")
        return cls(pts)

    def to_csv(self, path: Union[str, Path]) -> None:
        write_points_csv(path, self.points)


def as_points(obj: ArrayLike) -> np.ndarray:
    """Return the validated ``(n, d)`` float64 coordinate array of ``obj``."""
    if isinstance(obj, PointCloud):
        return obj.points
    return PointCloud(obj).points


def as_point(x, d: int | None = None) -> np.ndarray:
    """Validate a single point, optionally checking its dimension."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise InvalidArgumentError(f"a point must be 1-d, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise InvalidArgumentError(f"dimension mismatch: expected {d}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("point coordinates must be finite")
    return x


def half_sq_dist(x, y) -> float:
    """Half squared Euclidean distance between two points."""
    x = as_point(x)
    y = as_point(y, x.shape[0])
    diff = x - y
    return 0.5 * float(diff @ diff)


def pairwise_half_sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Unchecked ``0.5 * ||A_i - B_j||^2`` for raw 2-d arrays.

    Differences are formed explicitly (no ``|a|^2 - 2ab + |b|^2``
    expansion), so the result is exactly zero on coincident points and
    invariant under common translations up to round-off in the inputs.
    """
    return 0.5 * cdist(A, B, "sqeuclidean")


def cost_matrix(X: ArrayLike, Y: ArrayLike, max_entries: int = DEFAULT_MAX_ENTRIES) -> np.ndarray:
    """Materialize the ``n x m`` half squared distance matrix.

    Raises:
        InvalidArgumentError: if the dimensions differ.
        ResourceError: if ``n * m`` exceeds ``max_entries``.
    """
    A, B = as_points(X), as_points(Y)
    if A.shape[1] != B.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] * B.shape[0] > max_entries:
        raise ResourceError(
            f"cost matrix of {A.shape[0]}x{B.shape[0]} entries exceeds cap {max_entries}"
        )
    return pairwise_half_sq(A, B)


def cost_row_blocks(
    A: np.ndarray, B: np.ndarray, block_entries: int
) -> Iterator[tuple[slice, np.ndarray]]:
    """Yield ``(rows, C[rows])`` blocks of the cost matrix, computed on the fly."""
    rows = max(1, block_entries // max(1, B.shape[0]))
    for start in range(0, A.shape[0], rows):
        sl = slice(start, min(start + rows, A.shape[0]))
        yield sl, pairwise_half_sq(A[sl], B)


def lse(a: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted log-sum-exp without input validation (hot path)."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a - m), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(s) + m
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


def log_sum_exp(v) -> float:
    """Compute ``log(sum(exp(v)))`` stably by shifting by ``max(v)``.

    Entries equal to ``-inf`` carry no mass; if all entries are ``-inf``
    the result is ``-inf``.

    Raises:
        InvalidArgumentError: on an empty vector or any ``+inf``/NaN entry.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidArgumentError("log_sum_exp of an empty vector")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise InvalidArgumentError("log_sum_exp input contains NaN or +inf")
    if v.size == 1:
        return float(v[0])
    return float(lse(v))


def read_points_csv(path: Union[str, Path]) -> np.ndarray:
    """Read one point per row from a CSV file.

    The first row is treated as a header if any of its fields is not a
    number. Blank lines are ignored. Returns an ``(n, d)`` array, with
    ``n == 0`` (and ``d == 0`` when unknown) for a file without data.

    Raises:
        ParseError: on a non-numeric, non-finite or ragged row (the
            message carries the 1-based line number).
    """
    with open(path, newline="") as fh:
        text = fh.read()
    return parse_points_csv(text)


def parse_points_csv(text: str) -> np.ndarray:
    rows: list[list[float]] = []
    d = None
    first = True
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            if first:
                first = False
                continue
            raise ParseError(f"non-numeric field in {fields!r}", line=lineno) from None
        first = False
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite coordinate", line=lineno)
        if d is None:
            d = len(vals)
        elif len(vals) != d:
            raise ParseError(f"expected {d} fields, found {len(vals)}", line=lineno)
        rows.append(vals)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips to the same float64."""
    return repr(float(x))


def points_to_csv_text(points: np.ndarray) -> str:
    lines = [",".join(format_float(v) for v in row) for row in np.asarray(points)]
    return "".join(line + "\n" for line in lines)


def write_points_csv(path: Union[str, Path], points: np.ndarray) -> None:
    atomic_write_text(path, points_to_csv_text(points))


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    """Write ``text`` to a sibling temp file, then rename it over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
