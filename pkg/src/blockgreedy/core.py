"""Sparse column-major design matrix and the l1-regularized problem container."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

SQUARED = "squared"
LOGISTIC = "logistic"
LOSS_KINDS = (SQUARED, LOGISTIC)


class UsageError(ValueError):
    """Raised on invalid arguments (bad index, dimension mismatch, bad config)."""


@numba.njit(nogil=True, cache=True)
def _merge_dot(ra, va, rb, vb):
    i = 0
    k = 0
    s = 0.0
    while i < ra.size and k < rb.size:
        if ra[i] == rb[k]:
            s += va[i] * vb[k]
            i += 1
            k += 1
        elif ra[i] < rb[k]:
            i += 1
        else:
            k += 1
    return s


@numba.njit(nogil=True, cache=True)
def _csc_matvec(indptr, indices, data, w, n_rows):
    out = np.zeros(n_rows)
    for j in range(w.size):
        wj = w[j]
        if wj == 0.0:
            continue
        for k in range(indptr[j], indptr[j + 1]):
            out[indices[k]] += data[k] * wj
    return out


@numba.njit(nogil=True, cache=True)
def _csc_rmatvec(indptr, indices, data, v):
    p = indptr.size - 1
    out = np.zeros(p)
    for j in range(p):
        s = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            s += data[k] * v[indices[k]]
        out[j] = s
    return out


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class SparseColMatrix:
    """Compressed sparse-column matrix with cached column squared norms.

    ``indptr`` has length ``n_cols + 1``; column ``j`` occupies
    ``indices[indptr[j]:indptr[j+1]]`` (row ids, strictly increasing) and the
    matching slice of ``data``. Arrays are made read-only on construction.
    """

    def __init__(self, indptr, indices, data, shape, check: bool = True):
        self.n_rows, self.n_cols = int(shape[0]), int(shape[1])
        self.indptr = _readonly(np.asarray(indptr, dtype=np.int64))
        self.indices = _readonly(np.asarray(indices, dtype=np.int32))
        self.data = _readonly(np.asarray(data, dtype=np.float64))
        if check:
            self._validate()
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.indptr))
        self.sq_norms = _readonly(np.bincount(cols, self.data**2, minlength=self.n_cols))
        self._csr = None

    def _validate(self):
        ip, idx = self.indptr, self.indices
        if ip.size != self.n_cols + 1 or ip[0] != 0 or ip[-1] != idx.size:
            raise UsageError("indptr inconsistent with shape / nnz")
        if idx.size != self.data.size:
            raise UsageError("indices and data differ in length")
        if np.any(np.diff(ip) < 0):
            raise UsageError("indptr must be non-decreasing")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.n_rows:
                raise UsageError("row index out of range")
            # strictly increasing within each column: a non-increase is only
            # allowed where a new column starts
            bad = np.diff(idx.astype(np.int64)) <= 0
            starts = np.zeros(idx.size - 1, dtype=bool)
            inner = ip[1:-1]
            inner = inner[(inner > 0) & (inner < idx.size)]
            starts[inner - 1] = True
            if np.any(bad & ~starts):
                raise UsageError("row indices must be strictly increasing within a column")
        if not np.all(np.isfinite(self.data)):
            raise UsageError("matrix values must be finite")
        if np.any(self.data == 0.0):
            raise UsageError("explicit zeros are not allowed")

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_dense(cls, a) -> "SparseColMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise UsageError("expected a 2-D array")
        rows, cols = np.nonzero(a.T)  # column-major order
        indptr = np.zeros(a.shape[1] + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols, a.T[rows, cols], a.shape)

    @classmethod
    def from_columns(cls, n_rows: int, columns) -> "SparseColMatrix":
        """Build from a list of ``(row_indices, values)`` pairs, one per column."""
        indptr = [0]
        idx, vals = [], []
        for rows, v in columns:
            idx.append(np.asarray(rows, dtype=np.int64))
            vals.append(np.asarray(v, dtype=np.float64))
            indptr.append(indptr[-1] + len(rows))
        indices = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        data = np.concatenate(vals) if vals else np.zeros(0)
        return cls(np.array(indptr), indices, data, (n_rows, len(columns)))

    # -- accessors --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    def column_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def empty_columns(self) -> np.ndarray:
        return np.flatnonzero(self.column_nnz() == 0)

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        self._check_index(j)
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def _check_index(self, j):
        if not 0 <= j < self.n_cols:
            raise UsageError(f"feature index {j} out of range [0, {self.n_cols})")

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        cols = np.repeat(np.arange(self.n_cols), self.column_nnz())
        out[self.indices, cols] = self.data
        return out

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row-major copy ``(indptr, col_indices, data)``, built once and cached."""
        if self._csr is None:
            cols = np.repeat(np.arange(self.n_cols, dtype=np.int32), self.column_nnz())
            order = np.lexsort((cols, self.indices))
            rptr = np.zeros(self.n_rows + 1, dtype=np.int64)
            np.add.at(rptr, self.indices.astype(np.int64) + 1, 1)
            self._csr = (
                _readonly(np.cumsum(rptr)),
                _readonly(cols[order]),
                _readonly(self.data[order]),
            )
        return self._csr

    def __eq__(self, other):
        if not isinstance(other, SparseColMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"SparseColMatrix(n_rows={self.n_rows}, n_cols={self.n_cols}, nnz={self.nnz})"


def column_dot(m: SparseColMatrix, i: int, j: int) -> float:
    """Inner product of feature columns ``i`` and ``j`` by sparse merge."""
    m._check_index(i)
    m._check_index(j)
    if i > j:
        i, j = j, i
    if i == j:
        return float(m.sq_norms[i])
    ri, vi = m.column(i)
    rj, vj = m.column(j)
    return float(_merge_dot(ri, vi, rj, vj))


@dataclass(frozen=True)
class ColumnScaling:
    scales: np.ndarray  # l2 norm of each original column, 1.0 for empty ones
    empty: np.ndarray  # boolean mask of all-zero columns

    def to_original(self, w: np.ndarray) -> np.ndarray:
        """Map weights fitted on the normalized matrix back to original units."""
        return np.asarray(w) / self.scales


def normalize_columns(m: SparseColMatrix) -> tuple[SparseColMatrix, ColumnScaling]:
    """Scale every nonempty column to unit l2 norm (no centering)."""
    norms = np.sqrt(m.sq_norms)
    empty = m.column_nnz() == 0
    scales = np.where(empty, 1.0, norms)
    per_entry = np.repeat(scales, m.column_nnz())
    out = SparseColMatrix(m.indptr, m.indices, m.data / per_entry, m.shape, check=False)
    return out, ColumnScaling(scales=_readonly(scales), empty=_readonly(empty))


def predictions(m: SparseColMatrix, w) -> np.ndarray:
    """Dense ``X @ w``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m.n_cols,):
        raise UsageError(f"weight vector has shape {w.shape}, expected ({m.n_cols},)")
    return _csc_matvec(m.indptr, m.indices, m.data, w, m.n_rows)


def rmatvec(m: SparseColMatrix, v) -> np.ndarray:
    """Dense ``X.T @ v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.n_rows,):
        raise UsageError(f"vector has shape {v.shape}, expected ({m.n_rows},)")
    return _csc_rmatvec(m.indptr, m.indices, m.data, v)


def nnz(w) -> int:
    return int(np.count_nonzero(w))


@dataclass(frozen=True)
class Problem:
    """``min_w (1/n) sum_i loss(y_i, (Xw)_i) + lam * ||w||_1``."""

    design: SparseColMatrix
    labels: np.ndarray
    loss: str = SQUARED
    lam: float = 0.0

    def __post_init__(self):
        labels = _readonly(np.asarray(self.labels, dtype=np.float64))
        object.__setattr__(self, "labels", labels)
        if self.loss not in LOSS_KINDS:
            raise UsageError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if not self.lam >= 0 or not np.isfinite(self.lam):
            raise UsageError("lambda must be a finite nonnegative number")
        if labels.shape != (self.design.n_rows,):
            raise UsageError(
                f"{labels.size} labels for a design with {self.design.n_rows} rows"
            )
        if not np.all(np.isfinite(labels)):
            raise UsageError("labels must be finite")
        if self.loss == LOGISTIC and not np.all(np.abs(labels) == 1.0):
            raise UsageError("logistic loss requires labels in {-1, +1}")

    @property
    def n_samples(self) -> int:
        return self.design.n_rows

    @property
    def n_features(self) -> int:
        return self.design.n_cols

    def with_lambda(self, lam: float) -> "Problem":
        return Problem(self.design, self.labels, self.loss, lam)
