"""Block-greedy coordinate descent.

Each iteration selects ``P`` of the ``B`` blocks at random, proposes a
soft-thresholded increment for every feature in them, keeps the single largest
proposal per block, and applies the kept updates together. ``(B, P)`` picks the
algorithm: ``(p, 1)`` stochastic CD, ``(p, k)`` Shotgun, ``(1, 1)`` greedy CD,
``(B, B)`` thread-greedy.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .clustering import Partition
from .core import Problem, UsageError, predictions
from .losses import LOSS_CODE, coordinate_curvature, loss_deriv_scalar, objective, smooth_gradient
from .dataio import TraceRecord

log = logging.getLogger(__name__)

ALGORITHMS = ("scd", "shotgun", "greedy", "thread-greedy", "block-greedy")
BETA_POLICIES = ("per_coordinate", "global")


def algorithm_params(name: str, p: int, blocks: int | None = None, parallel: int | None = None):
    """``(B, P)`` for a named member of the block-greedy family."""
    if name == "scd":
        return p, 1
    if name == "shotgun":
        return p, parallel or 1
    if name == "greedy":
        return 1, 1
    if name == "thread-greedy":
        if blocks is None:
            raise UsageError("thread-greedy needs --blocks")
        return blocks, blocks
    if name == "block-greedy":
        if blocks is None:
            raise UsageError("block-greedy needs --blocks")
        return blocks, parallel or 1
    raise UsageError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")


@dataclass
class SolverConfig:
    num_blocks: int
    parallelism: int = 1
    beta_policy: str = "per_coordinate"
    tolerance: float = 1e-6
    max_iterations: int = 100_000
    max_seconds: float = 0.0  # 0 = unlimited
    seed: int = 0
    trace_every: int = 0  # iteration stride, 0 = off
    trace_seconds: float = 0.0  # wall-clock stride, 0 = off
    threads: int = 1
    record_updates: bool = False
    recompute_every: int = 10_000

    def validate(self, p: int):
        if not 1 <= self.parallelism <= self.num_blocks <= p:
            raise UsageError(
                f"need 1 <= P <= B <= p, got P={self.parallelism}, B={self.num_blocks}, p={p}"
            )
        if not self.tolerance > 0:
            raise UsageError("tolerance must be positive")
        if self.beta_policy not in BETA_POLICIES:
            raise UsageError(f"unknown beta policy {self.beta_policy!r}")
        if self.max_iterations < 0 or self.max_seconds < 0:
            raise UsageError("budgets must be nonnegative")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")


@dataclass
class Proposal:
    feature: int
    eta: float
    guaranteed_descent: float


def soft_threshold(z: float, tau: float) -> float:
    return math.copysign(max(abs(z) - tau, 0.0), z)


def propose_increment(g: float, beta_j: float, w_j: float, lam: float, feature: int = -1) -> Proposal:
    """Minimize ``g*eta + beta_j/2*eta^2 + lam*(|w_j + eta| - |w_j|)`` over ``eta``.

    The minimizer is ``S(w_j - g/beta_j, lam/beta_j) - w_j``; it is computed in
    the equivalent form below so that ``lam == 0`` gives exactly ``-g/beta_j``
    and a thresholded coordinate lands exactly on zero.
    """
    if not beta_j > 0:
        raise UsageError("curvature must be positive")
    z = w_j - g / beta_j
    if abs(z) > lam / beta_j:
        eta = (-g - math.copysign(lam, z)) / beta_j
    else:
        eta = -w_j
    descent = g * eta + 0.5 * beta_j * eta * eta + lam * (abs(w_j + eta) - abs(w_j))
    return Proposal(feature, eta, min(descent, 0.0))


def select_blocks(rng: np.random.Generator, num_blocks: int, parallelism: int) -> np.ndarray:
    """Uniform random ``P``-subset of block ids, sorted. No draw when ``P == B``."""
    if parallelism > num_blocks or parallelism < 1:
        raise UsageError(f"cannot select {parallelism} of {num_blocks} blocks")
    if parallelism == num_blocks:
        return np.arange(num_blocks, dtype=np.int64)
    return np.sort(rng.choice(num_blocks, size=parallelism, replace=False))


def greedy_accept(proposals) -> Proposal | None:
    """Largest ``|eta|`` in the block, lowest feature index on ties; None if all zero."""
    best = None
    for prop in proposals:
        if prop.eta == 0.0:
            continue
        if (
            best is None
            or abs(prop.eta) > abs(best.eta)
            or (abs(prop.eta) == abs(best.eta) and prop.feature < best.feature)
        ):
            best = prop
    return best


@numba.njit(nogil=True, cache=True)
def _propose_blocks(
    indptr, indices, data, y, pred, w, beta, lam, code, inv_n,
    bptr, bfeat, sel, out_j, out_eta, out_desc,
):
    for s in range(sel.size):
        b = sel[s]
        best_j = -1
        best_eta = 0.0
        best_desc = 0.0
        for q in range(bptr[b], bptr[b + 1]):
            j = bfeat[q]
            bj = beta[j]
            if bj <= 0.0:
                continue
            g = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                r = indices[k]
                g += loss_deriv_scalar(code, y[r], pred[r]) * data[k]
            g *= inv_n
            wj = w[j]
            z = wj - g / bj
            if abs(z) > lam / bj:
                eta = (-g - math.copysign(lam, z)) / bj
            else:
                eta = -wj
            if not math.isfinite(eta):
                # surface the blow-up instead of silently dropping it
                best_j = j
                best_eta = eta
                best_desc = 0.0
                break
            if abs(eta) > abs(best_eta):
                best_j = j
                best_eta = eta
                best_desc = g * eta + 0.5 * bj * eta * eta + lam * (abs(wj + eta) - abs(wj))
        out_j[s] = best_j
        out_eta[s] = best_eta
        out_desc[s] = min(best_desc, 0.0)


@numba.njit(nogil=True, cache=True)
def _apply_rows(indptr, indices, data, pred, feats, etas, lo, hi, whole):
    for t in range(feats.size):
        j = feats[t]
        a = indptr[j]
        b = indptr[j + 1]
        if not whole:
            col = indices[a:b]
            a, b = a + np.searchsorted(col, lo), a + np.searchsorted(col, hi)
        eta = etas[t]
        for k in range(a, b):
            pred[indices[k]] += eta * data[k]


@dataclass
class IterateState:
    weights: np.ndarray
    cached_predictions: np.ndarray
    iteration: int = 0
    nnz: int = 0
    objective: float | None = None


def apply_updates(problem: Problem, state: IterateState, accepted) -> IterateState:
    """Add each accepted ``eta`` to its weight and ``eta * X_j`` to the predictions."""
    if not accepted:
        return state
    feats = np.array([a.feature for a in accepted], dtype=np.int64)
    if np.unique(feats).size != feats.size:
        raise RuntimeError("two accepted proposals touch the same feature")
    etas = np.array([a.eta for a in accepted])
    m = problem.design
    _apply_rows(m.indptr, m.indices, m.data, state.cached_predictions, feats, etas, 0, m.n_rows, True)
    old = state.weights[feats]
    new = old + etas
    state.weights[feats] = new
    state.nnz += int(np.count_nonzero(new)) - int(np.count_nonzero(old))
    state.objective = None
    return state


@dataclass
class SolveResult:
    weights: np.ndarray
    trace: list[TraceRecord]
    reason: str  # converged | max_iterations | max_seconds | diverged
    iterations: int
    objective: float
    predictions: np.ndarray
    max_drift: float = 0.0  # largest |cached - recomputed| seen at any recompute
    updates: list[tuple[int, int, float, float]] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.weights))


class _Engine:
    """Holds the per-run arrays and the optional worker pool."""

    def __init__(self, problem: Problem, partition: Partition, beta: np.ndarray, threads: int):
        m = problem.design
        self.m = m
        self.y = problem.labels
        self.lam = float(problem.lam)
        self.code = LOSS_CODE[problem.loss]
        self.inv_n = 1.0 / problem.n_samples
        self.beta = beta
        self.bptr = partition.ptr
        self.bfeat = partition.features
        self.threads = threads
        self.pool = ThreadPoolExecutor(threads) if threads > 1 else None
        bounds = np.linspace(0, m.n_rows, threads + 1).astype(np.int64)
        self.row_stripes = list(zip(bounds[:-1], bounds[1:]))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()

    def propose(self, sel, w, pred):
        k = sel.size
        out_j = np.empty(k, dtype=np.int64)
        out_eta = np.empty(k)
        out_desc = np.empty(k)
        m = self.m
        args = (m.indptr, m.indices, m.data, self.y, pred, w, self.beta, self.lam,
                self.code, self.inv_n, self.bptr, self.bfeat)
        if self.pool is None or k == 1:
            _propose_blocks(*args, sel, out_j, out_eta, out_desc)
        else:
            # every worker reads the same pre-round snapshot and writes its own slice
            cuts = np.linspace(0, k, min(self.threads, k) + 1).astype(np.int64)
            futures = [
                self.pool.submit(_propose_blocks, *args, sel[a:b], out_j[a:b], out_eta[a:b], out_desc[a:b])
                for a, b in zip(cuts[:-1], cuts[1:])
            ]
            for f in futures:
                f.result()
        return out_j, out_eta, out_desc

    def apply(self, pred, feats, etas):
        m = self.m
        if self.pool is None:
            _apply_rows(m.indptr, m.indices, m.data, pred, feats, etas, 0, m.n_rows, True)
            return
        # each worker owns a row stripe, so no scalar has two concurrent writers
        futures = [
            self.pool.submit(_apply_rows, m.indptr, m.indices, m.data, pred, feats, etas, lo, hi, False)
            for lo, hi in self.row_stripes
        ]
        for f in futures:
            f.result()

    def max_eta(self, w, pred, num_blocks):
        _, eta, _ = self.propose(np.arange(num_blocks, dtype=np.int64), w, pred)
        return float(np.abs(eta).max()) if eta.size else 0.0


def run(problem: Problem, partition: Partition, config: SolverConfig, w0=None) -> SolveResult:
    """Run block-greedy CD from ``w0`` (default zero) until converged or out of budget.

    Convergence: the largest ``|eta|`` among the selected blocks stays below
    ``tolerance`` for ``ceil(B/P)`` consecutive iterations and, when ``P < B``,
    a full sweep over every block confirms it.
    """
    p = problem.n_features
    config.validate(p)
    if partition.n_features != p:
        raise UsageError(f"partition covers {partition.n_features} features, problem has {p}")
    if partition.num_blocks != config.num_blocks:
        raise UsageError(
            f"config asks for B={config.num_blocks} but the partition has {partition.num_blocks} blocks"
        )

    B, P = config.num_blocks, config.parallelism
    m = problem.design
    beta = coordinate_curvature(problem, config.beta_policy)
    rng = np.random.default_rng(config.seed)
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=np.float64)
    pred = predictions(m, w)
    state = IterateState(w, pred, 0, int(np.count_nonzero(w)))
    engine = _Engine(problem, partition, beta, config.threads)
    trace: list[TraceRecord] = []
    updates = []
    max_drift = 0.0
    start = time.perf_counter()
    next_time = config.trace_seconds if config.trace_seconds > 0 else math.inf
    last_max_eta = math.nan

    def refresh():
        nonlocal max_drift
        fresh = predictions(m, state.weights)
        max_drift = max(max_drift, float(np.max(np.abs(fresh - state.cached_predictions), initial=0.0)))
        state.cached_predictions[:] = fresh

    def record(elapsed):
        state.objective = objective(problem, state.weights, state.cached_predictions)
        if trace and trace[-1].iteration == state.iteration:
            return
        trace.append(TraceRecord(state.iteration, elapsed, state.objective, state.nnz, last_max_eta))

    with engine, np.errstate(over="ignore", invalid="ignore"):
        last_max_eta = engine.max_eta(w, state.cached_predictions, B)
        record(0.0)
        reason = "converged" if last_max_eta < config.tolerance else None
        streak = 0
        need = -(-B // P)
        while reason is None:
            elapsed = time.perf_counter() - start
            if state.iteration >= config.max_iterations:
                reason = "max_iterations"
                break
            if config.max_seconds and elapsed >= config.max_seconds:
                reason = "max_seconds"
                break

            sel = select_blocks(rng, B, P)
            out_j, out_eta, out_desc = engine.propose(sel, w, state.cached_predictions)
            if not np.all(np.isfinite(out_eta)):
                reason = "diverged"
                break
            keep = out_j >= 0
            feats, etas = out_j[keep], out_eta[keep]
            if feats.size:
                engine.apply(state.cached_predictions, feats, etas)
                old = w[feats]
                new = old + etas
                w[feats] = new
                state.nnz += int(np.count_nonzero(new)) - int(np.count_nonzero(old))
            state.iteration += 1
            it = state.iteration
            last_max_eta = float(np.abs(out_eta).max())
            if config.record_updates:
                updates.extend(
                    (it, int(j), float(e), float(d))
                    for j, e, d in zip(feats, etas, out_desc[keep])
                )

            if config.recompute_every and it % config.recompute_every == 0:
                refresh()
            if config.trace_every and it % config.trace_every == 0:
                refresh()
                record(time.perf_counter() - start)
            elif config.trace_seconds > 0:
                now = time.perf_counter() - start
                if now >= next_time:
                    record(now)
                    next_time = (math.floor(now / config.trace_seconds) + 1) * config.trace_seconds

            streak = streak + 1 if last_max_eta < config.tolerance else 0
            if streak >= need:
                if P == B:
                    reason = "converged"
                else:
                    last_max_eta = engine.max_eta(w, state.cached_predictions, B)
                    if last_max_eta < config.tolerance:
                        reason = "converged"
                    else:
                        streak = 0
        refresh()
        elapsed = time.perf_counter() - start
        record(elapsed)

    log.debug("stopped after %d iterations: %s", state.iteration, reason)
    return SolveResult(
        weights=w,
        trace=trace,
        reason=reason,
        iterations=state.iteration,
        objective=state.objective,
        predictions=state.cached_predictions,
        max_drift=max_drift,
        updates=updates,
        elapsed_seconds=elapsed,
    )


def proposals_all(problem: Problem, w, cached_predictions=None, beta_policy: str = "per_coordinate"):
    """The increment ``eta_j`` every feature would propose at ``w`` (0 for empty columns)."""
    w = np.asarray(w, dtype=np.float64)
    if cached_predictions is None:
        cached_predictions = predictions(problem.design, w)
    g = smooth_gradient(problem, cached_predictions)
    beta = coordinate_curvature(problem, beta_policy)
    eta = np.zeros_like(w)
    for j in np.flatnonzero(beta > 0):
        eta[j] = propose_increment(g[j], beta[j], w[j], problem.lam).eta
    return eta


def infinity_two_norm(v, partition: Partition) -> float:
    """l-infinity within each block, then l2 across blocks."""
    v = np.abs(np.asarray(v, dtype=np.float64))
    per_block = np.zeros(partition.num_blocks)
    np.maximum.at(per_block, partition.assignment, v)
    return float(np.sqrt(np.sum(per_block**2)))


def kkt_violation(problem: Problem, w, cached_predictions=None) -> np.ndarray:
    """Per-coordinate distance of ``-grad_j F`` from ``lam * d|w_j|``.

    Zero coordinates: ``max(|g_j| - lam, 0)``; nonzero ones: ``|g_j + lam*sign(w_j)|``.
    """
    w = np.asarray(w, dtype=np.float64)
    if cached_predictions is None:
        cached_predictions = predictions(problem.design, w)
    g = smooth_gradient(problem, cached_predictions)
    lam = problem.lam
    return np.where(w == 0.0, np.maximum(np.abs(g) - lam, 0.0), np.abs(g + lam * np.sign(w)))
