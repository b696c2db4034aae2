"""LIBSVM ingestion plus the CSV trace, key-value report and weight file formats."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import astuple, dataclass, fields

import numpy as np

from .core import SparseColMatrix, UsageError


class DataError(ValueError):
    """Malformed or unusable input data."""


# (n samples, p features, nnz) as distributed by the LIBSVM dataset page
TABLE1 = {
    "news20": (19_996, 1_355_191, 9_097_916),
    "reuters": (23_865, 47_237, 1_757_800),
    "realsim": (72_309, 20_958, 3_709_083),
    "kdda": (8_407_752, 20_216_830, 305_613_510),
}


@dataclass
class TraceRecord:
    iteration: int
    elapsed_seconds: float
    objective: float
    nnz: int
    max_abs_eta: float


TRACE_HEADER = [f.name for f in fields(TraceRecord)]


def write_trace(records, path) -> None:
    """CSV, one row per record; floats written with ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_HEADER)
        for rec in records:
            out.writerow(repr(v) if isinstance(v, float) else str(v) for v in astuple(rec))


def read_trace(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != TRACE_HEADER:
            raise DataError(f"{path}: unexpected trace header {header}")
        return [
            TraceRecord(int(r[0]), float(r[1]), float(r[2]), int(r[3]), float(r[4]))
            for r in rows
        ]


def _parse_line(line: str, path, lineno: int):
    body = line.split("#", 1)[0].split()
    if not body:
        return None
    try:
        label = float(body[0])
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad label {body[0]!r}")
    idx = np.empty(len(body) - 1, dtype=np.int64)
    val = np.empty(len(body) - 1)
    prev = 0
    for k, tok in enumerate(body[1:]):
        i, sep, v = tok.partition(":")
        try:
            if not sep:
                raise ValueError
            i = int(i)
            v = float(v)
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed entry {tok!r}")
        if i <= prev:
            what = "duplicate" if i == prev else "non-increasing" if i > 0 else "non-positive"
            raise DataError(f"{path}:{lineno}: {what} feature index {i}")
        if not math.isfinite(v):
            raise DataError(f"{path}:{lineno}: non-finite value in {tok!r}")
        if v == 0.0:
            raise DataError(f"{path}:{lineno}: explicit zero value in {tok!r}")
        idx[k] = i - 1
        val[k] = v
        prev = i
    return label, idx, val


def read_libsvm(path, n_features: int | None = None, logistic: bool = False):
    """Load ``<label> <index>:<value> ...`` lines (1-based, strictly increasing indices).

    Two passes over the file: the first counts samples and nonzeros and
    validates every line, the second fills preallocated arrays. ``p`` is the
    largest index seen unless ``n_features`` is given. With ``logistic`` the
    labels must be in {-1, +1} or {0, 1}; the latter are mapped to {-1, +1}.

    Returns ``(matrix, labels)``.
    """
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    n = nnz = 0
    max_idx = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parsed = _parse_line(line, path, lineno)
            if parsed is None:
                continue
            n += 1
            nnz += parsed[1].size
            if parsed[1].size:
                max_idx = max(max_idx, int(parsed[1][-1]))
    if n == 0:
        raise DataError(f"{path}: no samples")
    p = max_idx + 1
    if n_features is not None:
        if n_features < p:
            raise DataError(f"{path}: feature index {p} exceeds n_features={n_features}")
        p = n_features

    labels = np.empty(n)
    rows = np.empty(nnz, dtype=np.int32)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    r = pos = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parsed = _parse_line(line, path, lineno)
            if parsed is None:
                continue
            label, idx, val = parsed
            labels[r] = label
            k = idx.size
            rows[pos : pos + k] = r
            cols[pos : pos + k] = idx
            vals[pos : pos + k] = val
            pos += k
            r += 1

    # stable counting sort by column keeps rows increasing inside each column
    order = np.argsort(cols, kind="stable")
    indptr = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=p), out=indptr[1:])
    matrix = SparseColMatrix(indptr, rows[order], vals[order], (n, p), check=False)

    if logistic:
        labels = binary_labels(labels, path)
    return matrix, labels


def binary_labels(labels, path="labels") -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    classes = set(np.unique(labels).tolist())
    if classes <= {-1.0, 1.0}:
        return labels
    if classes <= {0.0, 1.0}:
        return np.where(labels > 0, 1.0, -1.0)
    raise DataError(f"{path}: logistic loss needs two classes {{-1,+1}} or {{0,1}}, got {sorted(classes)[:5]}")


def write_libsvm(matrix: SparseColMatrix, labels, path) -> None:
    rptr, rcols, rdata = matrix.csr()
    with open(path, "w") as fh:
        for r in range(matrix.n_rows):
            lo, hi = rptr[r], rptr[r + 1]
            entries = " ".join(f"{c + 1}:{v!r}" for c, v in zip(rcols[lo:hi].tolist(), rdata[lo:hi].tolist()))
            fh.write(f"{float(labels[r])!r} {entries}".rstrip() + "\n")


def format_kv(report: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in report.items())


def write_kv(report: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_kv(report))


def read_kv(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                k, _, v = line.partition(" = ")
                out[k.strip()] = v.strip()
    return out


def write_weights(w, path) -> None:
    """Sparse text: header ``# features=p`` then ``<index> <value>`` per nonzero."""
    w = np.asarray(w)
    with open(path, "w") as fh:
        fh.write(f"# features={w.size}\n")
        for j in np.flatnonzero(w):
            fh.write(f"{j} {float(w[j])!r}\n")


def read_weights(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline()
        try:
            p = int(header.split("features=")[1])
        except (IndexError, ValueError):
            raise DataError(f"{path}: bad weights header {header.strip()!r}")
        w = np.zeros(p)
        for line in fh:
            if line.strip():
                j, v = line.split()
                w[int(j)] = float(v)
    return w
