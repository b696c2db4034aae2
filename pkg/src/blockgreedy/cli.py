"""Command-line entry point: ``blockgreedy {solve,cluster,spectral}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .clustering import (
    Partition,
    cluster_features,
    contiguous_partition,
    max_cross_block_dot,
    partition_stats,
    random_partition,
)
from .core import LOSS_KINDS, Problem, UsageError, normalize_columns
from .dataio import DataError, format_kv, read_libsvm, write_kv, write_trace, write_weights
from .losses import smooth_gradient
from .solver import ALGORITHMS, BETA_POLICIES, SolverConfig, algorithm_params, run
from .spectral import ENUMERATION_BUDGET, spectral_report

log = logging.getLogger("blockgreedy")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
THREADS_ENV = "BLOCKGREEDY_THREADS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={raw!r} is not an integer")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


@dataclass
class RunManifest:
    data: str
    loss: str
    lambdas: list[float]
    algorithm: str
    num_blocks: int
    parallelism: int
    partition: str
    seed: int
    tolerance: float
    max_iterations: int
    max_seconds: float
    threads: int
    normalize: bool
    out: str
    beta_policy: str = "per_coordinate"
    auto_lambda0: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not self.lambdas:
            raise UsageError("need at least one lambda")
        if any(not (lam >= 0 and math.isfinite(lam)) for lam in self.lambdas):
            raise UsageError("every lambda must be finite and nonnegative")


def load_problem(path, loss: str, normalize: bool, n_features=None):
    matrix, labels = read_libsvm(path, n_features=n_features, logistic=(loss == "logistic"))
    scaling = None
    if normalize:
        matrix, scaling = normalize_columns(matrix)
    log.info("loaded %s: n=%d p=%d nnz=%d", path, matrix.n_rows, matrix.n_cols, matrix.nnz)
    return Problem(matrix, labels, loss, 0.0), scaling


def build_partition(source: str, matrix, num_blocks: int, seed: int, threads: int = 1) -> Partition:
    """``cluster``, ``random`` or ``file:<path>``; trivial when ``B`` is 1 or ``p``."""
    p = matrix.n_cols
    if source.startswith("file:"):
        part = Partition.load(source[5:])
        if part.n_features != p:
            raise UsageError(f"partition file covers {part.n_features} features, data has {p}")
        if part.num_blocks != num_blocks:
            raise UsageError(f"partition file has {part.num_blocks} blocks, expected {num_blocks}")
        return part
    if source not in ("cluster", "random"):
        raise UsageError(f"unknown partition source {source!r}")
    if num_blocks in (1, p):
        return contiguous_partition(p, num_blocks)
    if source == "cluster":
        return cluster_features(matrix, num_blocks, threads=threads)
    return random_partition(np.random.default_rng(seed), p, num_blocks)


def lambda_max(problem: Problem) -> float:
    """Smallest lambda for which w = 0 is optimal."""
    g = smooth_gradient(problem, np.zeros(problem.n_samples))
    return float(np.abs(g).max()) if g.size else 0.0


def auto_lambda0(problem: Problem, probe_iterations: int = 1) -> float:
    """Largest power of ten whose solution has a nonzero weight.

    Starts from the power just above ``lambda_max`` and walks down with short
    greedy probe runs until one produces a nonzero weight.
    """
    lmax = lambda_max(problem)
    if lmax == 0.0:
        raise DataError("the gradient at zero vanishes; every lambda gives w = 0")
    k = math.ceil(math.log10(lmax)) + 1
    trivial = contiguous_partition(problem.n_features, 1)
    while True:
        lam = 10.0**k
        res = run(
            problem.with_lambda(lam),
            trivial,
            SolverConfig(1, 1, max_iterations=probe_iterations, tolerance=1e-300),
        )
        if res.nnz > 0:
            return lam
        k -= 1


def _lambda_tag(lam: float) -> str:
    return f"{lam:g}"


def cmd_solve(args) -> int:
    threads = args.threads or default_threads()
    problem, scaling = load_problem(args.data, args.loss, args.normalize, args.n_features)
    p = problem.n_features
    blocks = min(args.blocks, p) if args.blocks else None
    B, P = algorithm_params(args.algorithm, p, blocks=blocks, parallel=args.parallel)

    if args.auto_lambda0:
        lam0 = auto_lambda0(problem)
        lambdas = [lam0 / 10**i for i in range(4)]
        log.info("auto lambda0 = %g", lam0)
    else:
        lambdas = args.lam or []
    manifest = RunManifest(
        data=str(args.data), loss=args.loss, lambdas=lambdas, algorithm=args.algorithm,
        num_blocks=B, parallelism=P, partition=args.partition, seed=args.seed,
        tolerance=args.tol, max_iterations=args.max_iters, max_seconds=args.max_seconds,
        threads=threads, normalize=args.normalize, out=str(args.out),
        beta_policy=args.beta_policy, auto_lambda0=args.auto_lambda0,
    )
    manifest.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")

    part = build_partition(args.partition, problem.design, B, args.seed, threads)
    rows = []
    for lam in lambdas:
        config = SolverConfig(
            num_blocks=B, parallelism=P, beta_policy=args.beta_policy, tolerance=args.tol,
            max_iterations=args.max_iters, max_seconds=args.max_seconds, seed=args.seed,
            trace_every=args.trace_every, trace_seconds=args.trace_seconds,
            threads=min(threads, P),
        )
        res = run(problem.with_lambda(lam), part, config)
        tag = _lambda_tag(lam)
        write_trace(res.trace, out / f"trace_lambda={tag}.csv")
        write_weights(res.weights, out / f"weights_lambda={tag}.txt")
        if scaling is not None:
            write_weights(scaling.to_original(res.weights), out / f"weights_original_lambda={tag}.txt")
        stats = partition_stats(problem.design, part, res.weights)
        final = res.trace[-1]
        rows.append({
            "lambda": tag,
            "reason": res.reason,
            "iterations": res.iterations,
            "seconds": f"{res.elapsed_seconds:.3f}",
            "active_blocks": stats.active_blocks,
            "nnz": final.nnz,
            "objective": repr(final.objective),
        })

    keys = list(rows[0])
    widths = {k: max(len(k), *(len(str(r[k])) for r in rows)) for k in keys}
    lines = ["  ".join(k.rjust(widths[k]) for k in keys)]
    lines += ["  ".join(str(r[k]).rjust(widths[k]) for k in keys) for r in rows]
    table = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(table)
    print(f"# algorithm={args.algorithm} B={B} P={P} partition={args.partition} n={problem.n_samples} p={p}")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_cluster(args) -> int:
    threads = args.threads or default_threads()
    problem, _ = load_problem(args.data, "squared", args.normalize, args.n_features)
    m = problem.design
    B = args.blocks
    start = time.perf_counter()
    if args.method == "cluster":
        part = cluster_features(m, B, threads=threads)
    else:
        part = random_partition(np.random.default_rng(args.seed), m.n_cols, B)
    seconds = time.perf_counter() - start
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    part.save(out / "partition.txt")
    stats = partition_stats(m, part)
    cross = max_cross_block_dot(m, part, rng=np.random.default_rng(args.seed))
    report = {
        "method": args.method,
        "features": m.n_cols,
        "clustering_seconds": f"{seconds:.6f}",
        **stats.as_dict(),
        "block_nnz": " ".join(map(str, stats.block_nnz.tolist())),
        "epsilon_hat": repr(cross.value),
        "epsilon_hat_exact": str(cross.exact).lower(),
        "epsilon_hat_pairs": cross.pairs,
    }
    write_kv(report, out / "partition_stats.txt")
    sys.stdout.write(format_kv(report))
    return EXIT_OK


def cmd_spectral(args) -> int:
    threads = args.threads or default_threads()
    problem, _ = load_problem(args.data, "squared", args.normalize, args.n_features)
    m = problem.design
    if args.partition.startswith("file:"):
        part = Partition.load(args.partition[5:])
        if part.n_features != m.n_cols:
            raise UsageError(f"partition file covers {part.n_features} features, data has {m.n_cols}")
    else:
        if not args.blocks:
            raise UsageError("--blocks is required unless --partition file:<path> is given")
        part = build_partition(args.partition, m, args.blocks, args.seed, threads)
    parallel = args.parallel or [1, part.num_blocks]
    if any(not 1 <= P <= part.num_blocks for P in parallel):
        raise UsageError(f"every P must lie in [1, {part.num_blocks}]")
    report = spectral_report(
        m, part, parallel, budget=args.budget, num_samples=args.samples,
        rng=np.random.default_rng(args.seed), threads=threads,
    )
    kv = report.as_dict()
    if report.epsilon_hat_exact and not report.bound_holds:
        kv["prop1_bound_flag"] = "VIOLATED"
    text = format_kv(kv)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _common(sp, normalize_default=False):
    sp.add_argument("--data", required=True, help="LIBSVM file")
    sp.add_argument("--normalize", action="store_true", default=normalize_default,
                    help="scale columns to unit l2 norm")
    sp.add_argument("--n-features", type=int, default=None, help="override p")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=None,
                    help=f"worker threads (default ${THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blockgreedy", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("solve", help="run block-greedy CD over a lambda list")
    _common(sp)
    sp.add_argument("--loss", choices=LOSS_KINDS, default="squared")
    sp.add_argument("--lambda", dest="lam", type=_float_list, default=None,
                    help="comma-separated regularization values")
    sp.add_argument("--auto-lambda0", action="store_true",
                    help="use the largest power of ten giving a nonzero solution and the next three")
    sp.add_argument("--algorithm", choices=ALGORITHMS, default="thread-greedy")
    sp.add_argument("--blocks", type=int, default=32)
    sp.add_argument("--parallel", type=int, default=None)
    sp.add_argument("--partition", default="cluster", help="cluster | random | file:<path>")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--max-iters", type=int, default=100_000)
    sp.add_argument("--max-seconds", type=float, default=0.0)
    sp.add_argument("--trace-every", type=int, default=1000, help="iteration stride of the trace")
    sp.add_argument("--trace-seconds", type=float, default=1.0, help="wall-clock stride of the trace")
    sp.add_argument("--beta-policy", choices=BETA_POLICIES, default="per_coordinate")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("cluster", help="partition features into blocks")
    _common(sp)
    sp.add_argument("--blocks", type=int, required=True)
    sp.add_argument("--method", choices=("cluster", "random"), default="cluster")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("spectral", help="block spectral radius and convergence parameter")
    _common(sp)
    sp.add_argument("--partition", default="cluster", help="cluster | random | file:<path>")
    sp.add_argument("--blocks", type=int, default=None)
    sp.add_argument("--parallel", type=_int_list, default=None, help="comma-separated P values")
    sp.add_argument("--budget", type=int, default=ENUMERATION_BUDGET)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_spectral)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "solve" and not args.lam and not args.auto_lambda0:
        parser.error("solve needs --lambda or --auto-lambda0")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"blockgreedy: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"blockgreedy: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"blockgreedy: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
