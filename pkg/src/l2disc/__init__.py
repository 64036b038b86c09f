"""Low l2 prefix-discrepancy colorings via constrained random walks.

The package builds signed series (prefix) colorings with a projected
random walk whose per-step covariance is a certified vector coloring,
tracks the diagnostic decompositions of the squared discrepancy growth,
evaluates and Monte-Carlo-validates the relevant martingale tail bounds,
and ships baselines plus a benchmark harness.
"""

from .baselines import brute_force_min_prefix, greedy_signing, random_signing
from .bench import ReportBundle, emit_report, run_benchmark
from .conc import (
    TailQuery,
    ValidationReport,
    freedman_bound,
    hw_martingale_bound,
    mc_tail_validate,
    modified_freedman_bound,
)
from .constraints import (
    ConstraintSet,
    CorruptionLog,
    assemble_constraint_set,
    build_ortho_constraints,
    build_row_constraints,
    build_singular_constraints,
    compute_active_set,
    update_corruption,
)
from .core import (
    Coloring,
    Instance,
    RunConfig,
    WalkState,
    generate_instance,
    load_matrix,
    round_coloring,
    save_coloring,
    save_matrix,
)
from .errors import (
    ColumnNormExceeded,
    ConstraintBudgetExceeded,
    L2DiscError,
    MalformedFile,
    MaxStepsExceeded,
    NumericalFailure,
    StepOverflow,
    UvcInfeasible,
)
from .komlos import RowCover, build_komlos_constraints, load_cover, run_komlos
from .metrics import (
    DiagnosticsTrace,
    local_mean_sq_discrepancy,
    max_prefix_discrepancy,
)
from .uvc import CertReport, VectorColoring, construct_uvc, verify_uvc
from .walk import StepSample, run_signed_series, walk_step

__version__ = "0.1.0"
