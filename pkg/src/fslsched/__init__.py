"""Learning-rate schedules under the functional scaling law (FSL).

Build schedule families and the optimal schedules, evaluate the FSL
functional, solve the budgeted variational problem, simulate one-pass SGD on
power-law linear regression, and fit convergence exponents.
"""

from ._validation import DivergenceError, ValidationError
from .functional import (
    FSLEvaluation,
    FSLValidityWarning,
    RatePrediction,
    evaluate_profile,
    evaluate_spec,
    evaluate_trace,
    kernel,
    predicted_fractional_rate,
    predicted_optimal_rate,
    spectral_bound,
)
from .harness import (
    ExperimentConfig,
    LogLogRateFit,
    RateFit,
    emit_plot_script,
    fit_rate,
    load_config,
    sweep,
    tune_peak_lr,
)
from .problem import (
    ProblemSpec,
    Regime,
    Spectrum,
    build_spectrum,
    regime_classify,
    sample_feature_batch,
    truncation_dim,
)
from .schedules import (
    IntrinsicProfile,
    ScheduleSpec,
    ScheduleTrace,
    materialize,
    optimal_schedule,
    tail_exponent,
    to_intrinsic_profile,
)
from .sgd import (
    MomentState,
    RunResult,
    ScheduledSGDRegressor,
    exact_moment_step,
    lower_bound_instance,
    run_exact,
    run_monte_carlo,
)
from .variational import (
    VariationalSolution,
    WSDObjective,
    beltrami_residual,
    optimal_intrinsic_profile,
    optimal_T,
    wsd_minimize,
    wsd_objective_eval,
)

__version__ = "0.1.0"
