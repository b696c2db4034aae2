"""Block spectral radius and the parallel-convergence parameter.

``rho_block`` is the largest spectral radius over the ``B x B`` Gram
submatrices obtained by picking one feature from every block.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .clustering import Partition, max_cross_block_dot
from .core import SparseColMatrix, UsageError

ENUMERATION_BUDGET = 1_000_000
DENSE_GRAM_LIMIT = 4000


@numba.njit(nogil=True, cache=True)
def _spectral_radius(M, max_iter, tol):
    k = M.shape[0]
    if k == 1:
        return abs(M[0, 0])
    # Repeated squaring: S_t is proportional to M^(2^t), so its columns align
    # with the dominant eigenvector after a few dozen steps regardless of gap.
    S = M.copy()
    nrm = math.sqrt(np.sum(S * S))
    if nrm == 0.0:
        return 0.0
    S /= nrm
    for _ in range(64):
        T = S @ S
        nrm = math.sqrt(np.sum(T * T))
        if nrm == 0.0:
            break
        T /= nrm
        diff = np.max(np.abs(T - S))
        S = T
        if diff < 1e-15:
            break
    best = 0
    best_norm = -1.0
    for c in range(k):
        cn = np.sum(S[:, c] * S[:, c])
        if cn > best_norm:
            best_norm = cn
            best = c
    x = S[:, best].copy()
    xn = math.sqrt(np.sum(x * x))
    if xn == 0.0:
        x = np.ones(k)
        xn = math.sqrt(k)
    x /= xn
    # plain power iteration to polish
    lam = np.dot(x, M @ x)
    for _ in range(max_iter):
        y = M @ x
        yn = math.sqrt(np.sum(y * y))
        if yn == 0.0:
            return 0.0
        x = y / yn
        new = np.dot(x, M @ x)
        done = abs(new - lam) <= tol * abs(new)
        lam = new
        if done:
            break
    return abs(lam)


def spectral_radius(M, max_iter: int = 200, tol: float = 1e-12) -> float:
    """Largest |eigenvalue| of a symmetric matrix by the power method."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError("expected a square matrix")
    return float(_spectral_radius(M, max_iter, tol))


@numba.njit(nogil=True, cache=True)
def _gram(indptr, indices, data, feats):
    k = feats.size
    G = np.zeros((k, k))
    for a in range(k):
        i = feats[a]
        for b in range(a, k):
            j = feats[b]
            x = indptr[i]
            y = indptr[j]
            s = 0.0
            while x < indptr[i + 1] and y < indptr[j + 1]:
                if indices[x] == indices[y]:
                    s += data[x] * data[y]
                    x += 1
                    y += 1
                elif indices[x] < indices[y]:
                    x += 1
                else:
                    y += 1
            G[a, b] = s
            G[b, a] = s
    return G


def gram_matrix(m: SparseColMatrix, feats) -> np.ndarray:
    """Dense ``X_F.T @ X_F`` for the listed features."""
    feats = np.asarray(feats, dtype=np.int64)
    return _gram(m.indptr, m.indices, m.data, feats)


@numba.njit(nogil=True, cache=True)
def _max_rho_enumerate(G, bptr, start, stop, max_iter, tol):
    """Max spectral radius over selections ``start..stop-1`` in mixed-radix order."""
    B = bptr.size - 1
    digit = np.zeros(B, dtype=np.int64)
    rem = start
    for b in range(B - 1, -1, -1):
        size = bptr[b + 1] - bptr[b]
        digit[b] = rem % size
        rem //= size
    M = np.empty((B, B))
    pos = np.empty(B, dtype=np.int64)
    best = 0.0
    for _ in range(start, stop):
        for b in range(B):
            pos[b] = bptr[b] + digit[b]
        for a in range(B):
            for c in range(B):
                M[a, c] = G[pos[a], pos[c]]
        r = _spectral_radius(M, max_iter, tol)
        if r > best:
            best = r
        # increment the mixed-radix counter (last block fastest)
        b = B - 1
        while b >= 0:
            digit[b] += 1
            if digit[b] < bptr[b + 1] - bptr[b]:
                break
            digit[b] = 0
            b -= 1
    return best


@numba.njit(nogil=True, cache=True)
def _max_rho_selections(G, pos_rows, max_iter, tol):
    N, B = pos_rows.shape
    M = np.empty((B, B))
    best = 0.0
    for t in range(N):
        for a in range(B):
            for c in range(B):
                M[a, c] = G[pos_rows[t, a], pos_rows[t, c]]
        r = _spectral_radius(M, max_iter, tol)
        if r > best:
            best = r
    return best


@numba.njit(nogil=True, cache=True)
def _max_rho_selections_sparse(indptr, indices, data, feat_rows, max_iter, tol):
    N = feat_rows.shape[0]
    best = 0.0
    for t in range(N):
        M = _gram(indptr, indices, data, feat_rows[t])
        r = _spectral_radius(M, max_iter, tol)
        if r > best:
            best = r
    return best


def num_selections(part: Partition) -> int:
    return math.prod(int(s) for s in part.sizes())


def _validate(m: SparseColMatrix, part: Partition):
    if part.n_features != m.n_cols:
        raise UsageError("partition does not match the matrix width")
    if np.any(part.sizes() == 0):
        raise UsageError("partition has an empty block; no one-per-block selection exists")
    nonempty = m.column_nnz() > 0
    if not np.allclose(m.sq_norms[nonempty], 1.0, rtol=0, atol=1e-8):
        warnings.warn("columns are not unit-normalized; rho_block is not scale-free")


def _partition_gram(m: SparseColMatrix, part: Partition) -> np.ndarray:
    if m.n_cols > DENSE_GRAM_LIMIT:
        raise UsageError(
            f"{m.n_cols} features exceeds the dense Gram limit ({DENSE_GRAM_LIMIT}) for exact search"
        )
    # row/column order follows part.features, so block b is ptr[b]..ptr[b+1]
    return gram_matrix(m, part.features)


def rho_block_exact(
    m: SparseColMatrix,
    part: Partition,
    budget: int = ENUMERATION_BUDGET,
    threads: int = 1,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> float:
    """Enumerate every one-feature-per-block selection and return the largest radius."""
    total = num_selections(part)
    if total > budget:
        raise UsageError(
            f"{total} selections exceed the enumeration budget {budget}; use rho_block_sampled"
        )
    _validate(m, part)
    G = _partition_gram(m, part)
    if threads <= 1 or total < 1000:
        return float(_max_rho_enumerate(G, part.ptr, 0, total, max_iter, tol))
    cuts = np.linspace(0, total, threads + 1).astype(np.int64)
    with ThreadPoolExecutor(threads) as pool:
        futures = [
            pool.submit(_max_rho_enumerate, G, part.ptr, int(a), int(b), max_iter, tol)
            for a, b in zip(cuts[:-1], cuts[1:])
        ]
        return float(max(f.result() for f in futures))


def rho_block_sampled(
    m: SparseColMatrix,
    part: Partition,
    num_samples: int,
    rng: np.random.Generator,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> tuple[float, int]:
    """Largest radius over ``num_samples`` uniform random selections: a lower bound.

    When ``num_samples`` reaches the number of distinct selections the space is
    enumerated instead, so the result is then exact. Returns
    ``(estimate, selections evaluated)``.
    """
    if num_samples < 1:
        raise UsageError("num_samples must be >= 1")
    total = num_selections(part)
    if num_samples >= total:
        return rho_block_exact(m, part, budget=total, max_iter=max_iter, tol=tol), total
    _validate(m, part)
    sizes = part.sizes()
    # one uniform per (sample, block): a longer run extends a shorter one
    u = rng.random((num_samples, part.num_blocks))
    offsets = np.minimum((u * sizes).astype(np.int64), sizes - 1)
    pos = part.ptr[:-1] + offsets
    if m.n_cols <= DENSE_GRAM_LIMIT:
        G = _partition_gram(m, part)
        return float(_max_rho_selections(G, pos, max_iter, tol)), num_samples
    feats = part.features[pos]
    value = _max_rho_selections_sparse(m.indptr, m.indices, m.data, feats, max_iter, tol)
    return float(value), num_samples


def prop1_bound(epsilon_hat: float, num_blocks: int) -> float:
    """Upper bound ``1 + (B-1)*eps`` on the radius of a unit-diagonal PSD matrix."""
    if epsilon_hat < 0:
        raise UsageError("epsilon_hat must be nonnegative")
    return 1.0 + (num_blocks - 1) * epsilon_hat


def theorem1_epsilon(rho: float, num_blocks: int, parallelism: int) -> float:
    """``(P-1)(rho-1)/(B-1)``; parallel block-greedy is guaranteed to converge when < 1."""
    if not 1 <= parallelism <= num_blocks:
        raise UsageError(f"need 1 <= P <= B, got P={parallelism}, B={num_blocks}")
    if parallelism == 1:
        return 0.0
    return (parallelism - 1) * (rho - 1.0) / (num_blocks - 1)


@dataclass
class SpectralReport:
    rho_estimate: float
    method: str  # exact_enumeration | monte_carlo
    samples_used: int
    num_blocks: int
    epsilon_hat: float
    epsilon_hat_exact: bool
    prop1_bound: float
    epsilons: dict[int, float] = field(default_factory=dict)

    @property
    def bound_holds(self) -> bool:
        return self.rho_estimate <= self.prop1_bound + 1e-9

    def guaranteed(self, parallelism: int) -> bool:
        return self.epsilons[parallelism] < 1.0

    def as_dict(self) -> dict:
        d = {
            "rho_estimate": repr(self.rho_estimate),
            "method": self.method,
            "samples_used": self.samples_used,
            "num_blocks": self.num_blocks,
            "epsilon_hat": repr(self.epsilon_hat),
            "epsilon_hat_exact": str(self.epsilon_hat_exact).lower(),
            "prop1_bound": repr(self.prop1_bound),
            "prop1_bound_holds": str(self.bound_holds).lower()
            if self.epsilon_hat_exact
            else "unchecked",
        }
        for P, eps in sorted(self.epsilons.items()):
            d[f"theorem1_epsilon.P{P}"] = repr(eps)
            d[f"guarantee.P{P}"] = "holds" if eps < 1.0 else "fails"
        return d


def spectral_report(
    m: SparseColMatrix,
    part: Partition,
    parallelisms=(),
    budget: int = ENUMERATION_BUDGET,
    num_samples: int = 100_000,
    rng: np.random.Generator | None = None,
    threads: int = 1,
) -> SpectralReport:
    """Exact radius when the selection count fits ``budget``, sampled otherwise."""
    rng = np.random.default_rng(0) if rng is None else rng
    total = num_selections(part)
    if total <= budget:
        rho = rho_block_exact(m, part, budget=budget, threads=threads)
        method, used = "exact_enumeration", total
    else:
        rho, used = rho_block_sampled(m, part, num_samples, rng)
        method = "monte_carlo"
    cross = max_cross_block_dot(m, part, rng=rng)
    B = part.num_blocks
    eps = {int(P): theorem1_epsilon(rho, B, int(P)) for P in parallelisms}
    return SpectralReport(
        rho_estimate=rho,
        method=method,
        samples_used=used,
        num_blocks=B,
        epsilon_hat=cross.value,
        epsilon_hat_exact=cross.exact,
        prop1_bound=prop1_bound(cross.value, B),
        epsilons=eps,
    )
