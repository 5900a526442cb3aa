"""Intensity estimation for point processes on voxel grids with zero-deflated subsampling."""

__version__ = "0.1.0"

from .estimators import (  # noqa: E402
    FittedModel,
    Method,
    build_brl_cloglog_problem,
    build_brl_logit_problem,
    build_clrl_problem,
    build_pl_problem,
    build_problem,
    build_wclrl_problem,
    fit_method,
    fit_strata,
)
from .glm import FitResult, IRLSConfig, RegressionProblem, irls_fit, loglik_and_score  # noqa: E402
from .links import LinkFunction  # noqa: E402
from .metrics import (  # noqa: E402
    MetricsReport,
    PredictionSet,
    cumulative_curve,
    evaluate,
    pr_auc,
    predict_counts,
    residual_delta,
    roc_auc,
    ww_score,
)
from .subsample import SubsampleSpec, draw_clrl_subsample, draw_subsample  # noqa: E402
from .voxel import (  # noqa: E402
    VoxelTable,
    empty_fraction,
    load_table,
    partition_by_stratum,
    write_table,
)
