"""Parameter estimation for ODE models observed through unknown,
high-dimensional observation functions.

The estimation compares the temporal affinity structure of candidate model
trajectories with that of the observed series via centered Gaussian Gram
matrices, and maximizes the normalized dependence score over the parameter
box, either by exhaustive grid search or by multi-start local ascent.
"""

from .dynamics import (
    DEFAULT_GRAVITY,
    ParameterVector,
    SystemSpec,
    Trajectory,
    cartesian_states,
    cartesian_trajectory,
    double_pendulum_system,
    integrate,
    lorenz_rhs,
    lorenz_system,
    pendulum_cartesian,
    pendulum_energy,
    pendulum_rhs,
    rk4_step,
    trajectory_from_csv,
    trajectory_to_csv,
)
from .errors import (
    AllDivergedError,
    ConfigError,
    DegenerateDataError,
    DegenerateKernelError,
    DivergenceError,
    DynofitError,
    ZeroTrueParameterError,
)
from .estimator import (
    EstimationResult,
    OptimizerConfig,
    ParameterBox,
    SearchGrid,
    estimation_error,
    grid_search,
    local_optimize,
    make_grid,
    multistart_estimate,
    prediction_error,
)
from .harness import (
    ExperimentReport,
    apply_scale,
    default_config,
    load_config,
    normalize_config,
    run_experiment,
    write_report,
)
from .kernelscore import (
    EstimationProblem,
    GramMatrix,
    center_gram,
    centered_score,
    centering_matrix,
    gaussian_gram,
    gram_from_samples,
    linear_score_1,
    linear_score_2,
    make_kernel_objective,
    make_linear_objective,
    make_oracle_objective,
    maxmin_bandwidth,
    model_samples,
    oracle_objective,
    pairwise_sq_dists,
    score_of_parameter,
)
from .observation import (
    Canvas,
    LegendreBasis,
    NoiseSpec,
    ObservationSeries,
    legendre_basis,
    observation_from_binary,
    observation_from_csv,
    observation_to_binary,
    observation_to_csv,
    observe_linear,
    observe_lorenz_full,
    observe_lorenz_noisy,
    observe_lorenz_partial,
    render_pendulum_video,
)

__version__ = "0.1.0"
