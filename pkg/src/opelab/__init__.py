"""Off-policy evaluation laboratory for large discrete action spaces."""

from .core import (
    ActionCatalog,
    ContextSet,
    DegeneratePolicyError,
    DimensionError,
    LoggedDataset,
    Policy,
    RewardTable,
    SupportViolation,
    cluster_marginal,
    cluster_weight,
    embedding_marginal,
    embedding_marginal_weight,
    policy_value,
    vanilla_weight,
)
from .estimators import (
    ESTIMATOR_KINDS,
    EstimatorSpec,
    MissingLoggingPolicy,
    estimate,
    estimate_ablation,
    estimate_dm,
    estimate_dr,
    estimate_ips,
    estimate_mips,
    estimate_offcem,
)
from .harness import (
    ConfigError,
    EstimatorRequest,
    ExperimentConfig,
    ExperimentReport,
    emit_report,
    load_report,
    mse_decomposition,
    run_single,
    run_sweep,
)
from .oracle import (
    LocalCorrectnessError,
    NotEnumerable,
    TinyInstance,
    bias_closed_form,
    exact_mean,
    exact_variance,
    is_locally_correct,
    local_correctness_gap,
    locally_correct_model,
    mips_variance_reduction,
    random_tiny_instance,
    variance_closed_form_dr,
    variance_closed_form_ips,
    variance_closed_form_offcem,
)
from .regression import (
    CrossFitModel,
    InsufficientDataError,
    LearnerConfig,
    MatrixModel,
    PairDataset,
    RegressionModel,
    TrainingDiverged,
    build_pair_dataset,
    cross_fit,
    featurize,
    fit_baseline,
    fit_one_step,
    fit_pairwise,
    two_step_fit,
)
from .synthetic import (
    EnvironmentSpec,
    SyntheticEnvironment,
    apply_unsupported,
    epsilon_target,
    make_environment,
    sample_logged_data,
    softmax_logging,
)

__version__ = "0.1.0"
