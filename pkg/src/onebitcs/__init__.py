"""1-bit compressive sensing with generative priors."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergedError,
    DomainViolationError,
    InfeasibleError,
    InvalidArgumentError,
    ResourceLimitError,
)
from .measure import (
    MeasurementEnsemble,
    NoiseSpec,
    gaussian_matrix,
    geodesic_dist,
    hamming_dist,
    noisy_sign_measure,
    sign_measure,
)
from .genmodel import FeedForwardModel, GroupSparseModel, NormalizedModel, load_ffnet, save_ffnet
from .recover import RecoveryConfig, RecoveryResult, biht, lasso_1bit, lasso_linear, pgd_1bit, project_range, run_solver
from .embed import bese_deviation, build_epsilon_net, local_embedding_check, noisy_bound_check
from .harness import ExperimentConfig, load_config, run_sweep, emit_csv, load_csv
