"""Simulator for wireless federated edge learning with sparsified uploads,
deadline-based straggler cut-off and per-round ratio/deadline planning."""

from .channel import (
    ChannelDraw,
    DeviceProfile,
    LinkBudget,
    PopulationSpec,
    compute_time,
    data_rate,
    db_to_linear,
    dbm_to_watts,
    draw_channel,
    make_population,
    path_loss_db,
    success_probability,
    upload_time,
)
from .compression import (
    SparseUpdate,
    SparsificationPlan,
    approx_variance_coefficient,
    exact_variance,
    l1_l2_ratio,
    solve_preservation_probs,
    sparsify,
    sparsify_dense,
)
from .errors import (
    ConfigError,
    DeadlineCapWarning,
    DimensionMismatchError,
    DomainError,
    EmptyGradientError,
    FeelsimError,
    InfeasibleDeadlineError,
    InfeasiblePlanError,
    InvalidRatioError,
    NumericError,
)
from .experiment import (
    ExperimentConfig,
    MetricsRow,
    RunResult,
    config_from_dict,
    emit_report,
    load_config,
    run_experiment,
    run_suite,
)
from .federated import RoundOutcome, TrainingState, aggregate, apply_update, estimate_gradient_stats
from .optimizer import (
    OptimizerState,
    TransmissionPlan,
    baseline_plan,
    compute_bt,
    deadline_objective,
    h_inverse,
    lambert_w,
    optimal_deadline,
    optimal_ratio,
    transmission_plan,
)
from .tasks import LearningTask, Partition, TaskSpec, finalize_task, local_gradient, make_partition, make_task

__version__ = "0.1.0"
