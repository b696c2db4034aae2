"""Losses, their derivatives, and the curvature bounds used by the surrogate."""

from __future__ import annotations

import numba
import numpy as np

from .core import LOGISTIC, SQUARED, Problem, UsageError, predictions, rmatvec

# uniform upper bound on d^2 loss / dt^2
BETA_RAW = {SQUARED: 1.0, LOGISTIC: 0.25}

LOSS_CODE = {SQUARED: 0, LOGISTIC: 1}


def _check(kind, y):
    if kind not in BETA_RAW:
        raise UsageError(f"unknown loss {kind!r}")
    if kind == LOGISTIC and not np.all(np.abs(y) == 1.0):
        raise UsageError("logistic loss requires labels in {-1, +1}")


def loss_value(kind: str, y, t):
    """Pointwise loss; works on scalars and arrays."""
    _check(kind, y)
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if kind == SQUARED:
        out = 0.5 * (y - t) ** 2
    else:
        out = np.logaddexp(0.0, -y * t)
    return out[()] if out.ndim == 0 else out


def _sigmoid_neg(z):
    """sigma(-z) without overflow, branch split at z = 0."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    e = np.exp(-z[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return out


def loss_deriv(kind: str, y, t):
    """d loss / dt."""
    _check(kind, y)
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if kind == SQUARED:
        out = t - y
    else:
        y, t = np.broadcast_arrays(y, t)
        out = -y * _sigmoid_neg(y * t)
    return out[()] if out.ndim == 0 else out


@numba.njit(nogil=True, cache=True)
def loss_deriv_scalar(code, y, t):
    if code == 0:
        return t - y
    z = y * t
    if z >= 0.0:
        e = np.exp(-z)
        return -y * e / (1.0 + e)
    return -y / (1.0 + np.exp(z))


def objective(problem: Problem, w, cached_predictions=None) -> float:
    """Mean loss plus ``lam * ||w||_1``.

    ``cached_predictions`` must equal ``X @ w``; it is recomputed when omitted.
    """
    w = np.asarray(w, dtype=np.float64)
    if cached_predictions is None:
        cached_predictions = predictions(problem.design, w)
    data_term = np.mean(loss_value(problem.loss, problem.labels, cached_predictions))
    return float(data_term + problem.lam * np.abs(w).sum())


def smooth_gradient(problem: Problem, cached_predictions) -> np.ndarray:
    """Full gradient of the smooth part, ``X.T @ loss'(y, Xw) / n``."""
    d = loss_deriv(problem.loss, problem.labels, cached_predictions)
    return rmatvec(problem.design, d) / problem.n_samples


def coordinate_gradient(problem: Problem, j: int, cached_predictions) -> float:
    """``d F / d w_j`` touching only the nonzeros of column ``j``."""
    rows, vals = problem.design.column(j)
    if rows.size == 0:
        return 0.0
    d = loss_deriv(problem.loss, problem.labels[rows], np.asarray(cached_predictions)[rows])
    return float(np.dot(d, vals) / problem.n_samples)


def coordinate_curvature(problem: Problem, policy: str = "per_coordinate") -> np.ndarray:
    """Per-feature curvature constants for the coordinate surrogate.

    The smooth part carries a ``1/n`` factor, so the bound on its Hessian is
    ``beta_raw / n * X.T X``. ``per_coordinate`` uses the diagonal entry of each
    feature; ``global`` uses the largest diagonal entry for every feature.
    Empty columns get 0.
    """
    m = problem.design
    scale = BETA_RAW[problem.loss] / problem.n_samples
    if policy == "per_coordinate":
        beta = scale * np.asarray(m.sq_norms)
    elif policy == "global":
        top = float(m.sq_norms.max()) if m.n_cols else 0.0
        beta = np.full(m.n_cols, scale * top)
        beta[m.column_nnz() == 0] = 0.0
    else:
        raise UsageError(f"unknown beta policy {policy!r}")
    return beta
