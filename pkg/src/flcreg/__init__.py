"""Group-penalized variable selection for functional linear concurrent regression."""

from .basis import (
    PenaltyMatrices,
    SplineBasis,
    curvature_matrix,
    gram_matrix,
    make_basis,
    penalty_matrices,
    penalty_root,
)
from .bootstrap import BootstrapResult, bootstrap_ci
from .dataset import FunctionalDataset
from .dataio import ingest_long_csv, lag_augment, parse_config_file, write_long_csv
from .errors import NumericalError
from .flcm import (
    ConcurrentModelSpec,
    FitConfig,
    FitResult,
    build_design,
    fit_flcm,
    penalized_criterion,
    prewhiten,
    recover_coefficients,
    whitening_root,
)
from .fpca import (
    FpcaModel,
    FunctionalObservations,
    eigendecompose,
    estimate_covariance,
    estimate_mean,
    fit_fpca,
    pace_scores,
    reconstruct,
)
from .sim import (
    SimConfig,
    StudyReport,
    generate_dataset,
    generate_pseudo_covariates,
    generate_pseudo_dataset,
    run_study,
    true_beta,
    true_intercept,
)
from .solver import (
    Group,
    GroupDesign,
    PenaltySpec,
    SolverResult,
    default_lambda_grid,
    group_threshold,
    lambda_max,
    objective_value,
    orthonormalize_groups,
    penalty_value,
    solve,
    solve_path,
)
from .tuning import TuningRecord, ebic, select_model

__version__ = "0.1.0"
