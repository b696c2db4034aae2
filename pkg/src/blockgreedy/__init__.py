"""Block-greedy parallel coordinate descent for l1-regularized loss minimization."""

from .clustering import (
    Partition,
    cluster_features,
    max_cross_block_dot,
    partition_stats,
    random_partition,
)
from .core import (
    LOGISTIC,
    SQUARED,
    Problem,
    SparseColMatrix,
    UsageError,
    column_dot,
    normalize_columns,
    predictions,
)
from .dataio import DataError, TraceRecord, read_libsvm, read_trace, write_trace
from .losses import coordinate_gradient, loss_deriv, loss_value, objective
from .solver import (
    SolveResult,
    SolverConfig,
    algorithm_params,
    greedy_accept,
    kkt_violation,
    propose_increment,
    run,
    select_blocks,
)
from .spectral import (
    prop1_bound,
    rho_block_exact,
    rho_block_sampled,
    spectral_report,
    theorem1_epsilon,
)

__version__ = "0.1.0"
