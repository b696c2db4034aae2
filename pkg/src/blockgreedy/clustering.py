"""Feature partitions: correlation-seeded clustering, random baseline, statistics."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .core import SparseColMatrix, UsageError


def balanced_sizes(p: int, num_blocks: int) -> np.ndarray:
    """Block sizes for ``p`` features: the first ``p % B`` blocks get one extra."""
    if not 1 <= num_blocks <= p:
        raise UsageError(f"need 1 <= B <= p, got B={num_blocks}, p={p}")
    sizes = np.full(num_blocks, p // num_blocks, dtype=np.int64)
    sizes[: p % num_blocks] += 1
    return sizes


class Partition:
    """Disjoint assignment of ``p`` features to ``num_blocks`` blocks.

    Features inside a block are kept in ascending order; ``ptr``/``features``
    give the flattened CSR-style layout that the solver kernels consume.
    """

    def __init__(self, assignment, num_blocks: int):
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.ndim != 1:
            raise UsageError("assignment must be one-dimensional")
        if num_blocks < 1:
            raise UsageError("a partition needs at least one block")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= num_blocks):
            raise UsageError("block index out of range")
        self.num_blocks = int(num_blocks)
        self.assignment = assignment
        self.assignment.flags.writeable = False
        order = np.argsort(assignment, kind="stable")
        counts = np.bincount(assignment, minlength=num_blocks)
        self.ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.features = order.astype(np.int64)
        self.ptr.flags.writeable = False
        self.features.flags.writeable = False

    @classmethod
    def from_blocks(cls, blocks, p: int | None = None) -> "Partition":
        blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
        total = sum(b.size for b in blocks)
        p = total if p is None else p
        assignment = np.full(p, -1, dtype=np.int64)
        for k, b in enumerate(blocks):
            if b.size and (b.min() < 0 or b.max() >= p):
                raise UsageError("feature index out of range")
            if np.any(assignment[b] != -1) or np.unique(b).size != b.size:
                raise UsageError("feature assigned to more than one block")
            assignment[b] = k
        if np.any(assignment < 0):
            raise UsageError("some features are not assigned to any block")
        return cls(assignment, len(blocks))

    @property
    def n_features(self) -> int:
        return int(self.assignment.size)

    def block(self, b: int) -> np.ndarray:
        return self.features[self.ptr[b] : self.ptr[b + 1]]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.block(b) for b in range(self.num_blocks)]

    def sizes(self) -> np.ndarray:
        return np.diff(self.ptr)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.num_blocks == other.num_blocks and np.array_equal(
            self.assignment, other.assignment
        )

    def same_grouping(self, other: "Partition") -> bool:
        """Equality up to relabeling of blocks."""
        mine = sorted(tuple(b) for b in self.blocks)
        theirs = sorted(tuple(b) for b in other.blocks)
        return mine == theirs

    def __repr__(self):
        return f"Partition(num_blocks={self.num_blocks}, n_features={self.n_features})"

    # -- text format: header, then "<feature> <block>" per line ------------

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# blocks={self.num_blocks} features={self.n_features}\n")
            for j, b in enumerate(self.assignment):
                fh.write(f"{j} {b}\n")

    @classmethod
    def load(cls, path) -> "Partition":
        with open(path) as fh:
            header = fh.readline().split()
            try:
                if header[0] != "#":
                    raise ValueError
                fields = dict(tok.split("=") for tok in header[1:])
                num_blocks, p = int(fields["blocks"]), int(fields["features"])
            except (ValueError, KeyError, IndexError):
                raise UsageError(f"{path}: bad partition header {' '.join(header)!r}")
            assignment = np.full(p, -1, dtype=np.int64)
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    j, b = map(int, line.split())
                except ValueError:
                    raise UsageError(f"{path}:{lineno}: expected '<feature> <block>'")
                if not 0 <= j < p or assignment[j] != -1:
                    raise UsageError(f"{path}:{lineno}: bad or repeated feature index {j}")
                assignment[j] = b
        if np.any(assignment < 0):
            raise UsageError(f"{path}: not every feature is assigned")
        return cls(assignment, num_blocks)


@numba.njit(nogil=True, cache=True)
def _abs_dots(indptr, indices, data, dense, lo, hi, out):
    for j in range(lo, hi):
        s = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            s += data[k] * dense[indices[k]]
        out[j] = abs(s)


def _top_k_lowest_index(candidates: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` candidates with the largest score; ties go to lower indices.

    ``candidates`` must be sorted ascending. Uses a partition, not a full sort.
    """
    if k >= candidates.size:
        return candidates
    cut = np.partition(scores, candidates.size - k)[candidates.size - k]
    above = candidates[scores > cut]
    tied = candidates[scores == cut][: k - above.size]
    return np.sort(np.concatenate([above, tied]))


def cluster_features(m: SparseColMatrix, num_blocks: int, threads: int = 1) -> Partition:
    """Greedy correlation clustering seeded by the densest unassigned feature.

    Each of the first ``B - 1`` blocks is grown around a seed ``s`` by taking the
    unassigned features with the largest ``|<X_s, X_j>|`` (the seed itself is
    always included); the last block takes whatever is left.
    """
    p = m.n_cols
    sizes = balanced_sizes(p, num_blocks)
    col_nnz = m.column_nnz()
    assignment = np.full(p, -1, dtype=np.int64)
    unassigned = np.ones(p, dtype=bool)
    dense = np.zeros(m.n_rows)
    c = np.empty(p)
    chunks = np.linspace(0, p, max(1, threads) + 1).astype(np.int64)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for b in range(num_blocks - 1):
            seed = int(np.argmax(np.where(unassigned, col_nnz, -1)))
            rows, vals = m.column(seed)
            dense[rows] = vals
            if pool is None:
                _abs_dots(m.indptr, m.indices, m.data, dense, 0, p, c)
            else:
                futures = [
                    pool.submit(_abs_dots, m.indptr, m.indices, m.data, dense, lo, hi, c)
                    for lo, hi in zip(chunks[:-1], chunks[1:])
                ]
                for f in futures:
                    f.result()
            dense[rows] = 0.0
            c[seed] = np.inf
            cand = np.flatnonzero(unassigned)
            chosen = _top_k_lowest_index(cand, c[cand], int(sizes[b]))
            assignment[chosen] = b
            unassigned[chosen] = False
    finally:
        if pool is not None:
            pool.shutdown()
    assignment[unassigned] = num_blocks - 1
    return Partition(assignment, num_blocks)


def random_partition(rng: np.random.Generator, p: int, num_blocks: int) -> Partition:
    """Random permutation of the features cut into near-equal contiguous chunks."""
    sizes = balanced_sizes(p, num_blocks)
    perm = rng.permutation(p)
    assignment = np.empty(p, dtype=np.int64)
    assignment[perm] = np.repeat(np.arange(num_blocks), sizes)
    return Partition(assignment, num_blocks)


def contiguous_partition(p: int, num_blocks: int) -> Partition:
    return Partition(np.repeat(np.arange(num_blocks), balanced_sizes(p, num_blocks)), num_blocks)


@dataclass
class PartitionStats:
    block_sizes: np.ndarray
    block_nnz: np.ndarray
    max_nnz: int
    min_nnz: int
    mean_nnz: float
    active_blocks: int | None = None

    @property
    def load_balance(self) -> float:
        """Densest block's nnz over the mean; 1.0 is a perfect split."""
        return self.max_nnz / self.mean_nnz if self.mean_nnz > 0 else 1.0

    def as_dict(self) -> dict:
        d = {
            "num_blocks": int(self.block_sizes.size),
            "max_block_nnz": self.max_nnz,
            "min_block_nnz": self.min_nnz,
            "mean_block_nnz": self.mean_nnz,
            "load_balance": self.load_balance,
        }
        if self.active_blocks is not None:
            d["active_blocks"] = self.active_blocks
        return d


def partition_stats(m: SparseColMatrix, part: Partition, w=None) -> PartitionStats:
    if part.n_features != m.n_cols:
        raise UsageError("partition does not match the matrix width")
    block_nnz = np.bincount(
        part.assignment, weights=m.column_nnz(), minlength=part.num_blocks
    ).astype(np.int64)
    active = None
    if w is not None:
        touched = part.assignment[np.flatnonzero(np.asarray(w))]
        active = int(np.unique(touched).size)
    return PartitionStats(
        block_sizes=part.sizes(),
        block_nnz=block_nnz,
        max_nnz=int(block_nnz.max()),
        min_nnz=int(block_nnz.min()),
        mean_nnz=float(block_nnz.mean()),
        active_blocks=active,
    )


@numba.njit(nogil=True, cache=True)
def _max_cross_exact(indptr, indices, data, rptr, rcols, rdata, assign, p):
    acc = np.zeros(p)
    touched = np.empty(p, dtype=np.int64)
    seen = np.zeros(p, dtype=np.bool_)
    best = 0.0
    for i in range(p):
        nt = 0
        for k in range(indptr[i], indptr[i + 1]):
            r = indices[k]
            v = data[k]
            for q in range(rptr[r], rptr[r + 1]):
                j = rcols[q]
                if j <= i:
                    continue
                if not seen[j]:
                    seen[j] = True
                    touched[nt] = j
                    nt += 1
                acc[j] += v * rdata[q]
        for t in range(nt):
            j = touched[t]
            if assign[j] != assign[i] and abs(acc[j]) > best:
                best = abs(acc[j])
            acc[j] = 0.0
            seen[j] = False
    return best


@numba.njit(nogil=True, cache=True)
def _max_pair_dots(indptr, indices, data, pi, pj):
    best = 0.0
    for t in range(pi.size):
        i = pi[t]
        j = pj[t]
        a = indices[indptr[i] : indptr[i + 1]]
        b = indices[indptr[j] : indptr[j + 1]]
        va = data[indptr[i] : indptr[i + 1]]
        vb = data[indptr[j] : indptr[j + 1]]
        x = 0
        y = 0
        s = 0.0
        while x < a.size and y < b.size:
            if a[x] == b[y]:
                s += va[x] * vb[y]
                x += 1
                y += 1
            elif a[x] < b[y]:
                x += 1
            else:
                y += 1
        if abs(s) > best:
            best = abs(s)
    return best


@dataclass
class CrossBlockDot:
    value: float
    exact: bool
    pairs: int  # pairs examined (all cross-block pairs when exact)


def _warn_if_unnormalized(m: SparseColMatrix):
    nonempty = m.column_nnz() > 0
    if not np.allclose(m.sq_norms[nonempty], 1.0, rtol=0, atol=1e-8):
        warnings.warn("columns are not unit-normalized; inner products are not correlations")


def max_cross_block_dot(
    m: SparseColMatrix,
    part: Partition,
    exact_limit: int = 5000,
    num_samples: int = 1_000_000,
    rng: np.random.Generator | None = None,
) -> CrossBlockDot:
    """Largest ``|<X_i, X_j>|`` over feature pairs lying in different blocks.

    Exact when ``p <= exact_limit``; otherwise a lower estimate from
    ``num_samples`` random cross-block pairs.
    """
    if part.n_features != m.n_cols:
        raise UsageError("partition does not match the matrix width")
    _warn_if_unnormalized(m)
    p = m.n_cols
    sizes = part.sizes()
    cross_pairs = int((p * p - int((sizes**2).sum())) // 2)
    if part.num_blocks == 1:
        return CrossBlockDot(0.0, True, 0)
    if p <= exact_limit:
        rptr, rcols, rdata = m.csr()
        value = _max_cross_exact(
            m.indptr, m.indices, m.data, rptr, rcols, rdata, part.assignment, p
        )
        return CrossBlockDot(float(value), True, cross_pairs)
    rng = np.random.default_rng(0) if rng is None else rng
    pi_parts, pj_parts, have = [], [], 0
    while have < num_samples:
        draw = rng.integers(0, p, size=(num_samples, 2))
        keep = part.assignment[draw[:, 0]] != part.assignment[draw[:, 1]]
        draw = draw[keep][: num_samples - have]
        pi_parts.append(draw[:, 0])
        pj_parts.append(draw[:, 1])
        have += draw.shape[0]
    pi, pj = np.concatenate(pi_parts), np.concatenate(pj_parts)
    value = _max_pair_dots(m.indptr, m.indices, m.data, pi, pj)
    return CrossBlockDot(float(value), False, int(pi.size))

